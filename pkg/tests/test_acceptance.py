"""Acceptance checks, one test per criterion; each records a PASS/FAIL line.

The lines are printed at the end of the session by the conftest hook, so
``pytest tests/test_acceptance.py`` shows them without ``-s``.
"""
import os
import time
from pathlib import Path

import numpy as np
import pytest

from cfkgr import benchgen, couldd
from cfkgr.benchgen import CompositionRule, GenConfig, generate_dataset, split_valid_test, write_dataset
from cfkgr.calibration import best_threshold, classify, synth_negatives, tune
from cfkgr.kg import load_kg_dir
from cfkgr.metrics import LabeledPrediction, changed_accuracy, overall_f1, unchanged_f1
from cfkgr.models import ModelConfig, init_model
from cfkgr.seeding import substream
from cfkgr.synthetic import PlantedSpec, planted_rule_kg
from cfkgr.trainer import TrainConfig, TrainingStats, candidate_lists, loss_and_grad, train
from cfkgr.validation import validate_dataset

from conftest import toy_kg

RESULTS: list[str] = []
CODEX = os.environ.get("CFKGR_CODEX_DIR")


def record(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS.append(line)
    print(line)
    return ok


# -- 1 -----------------------------------------------------------------------------

def fd_error(model, lists, stats, step=1e-5):
    cfg = TrainConfig(negatives_per_direction=lists.shape[1] - 1)
    rng = np.random.default_rng(0)
    _, grad = loss_and_grad(model, None, cfg, rng, stats, lists=lists)
    analytic = grad.to_dense(model)
    worst = 0.0
    for name, arr in model.parameters().items():
        num = np.empty_like(arr)
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + step
            up, _ = loss_and_grad(model, None, cfg, rng, stats, lists=lists)
            arr[idx] = orig - step
            down, _ = loss_and_grad(model, None, cfg, rng, stats, lists=lists)
            arr[idx] = orig
            num[idx] = (up - down) / (2 * step)
        scale = max(np.abs(num).max(), np.abs(analytic[name]).max(), 1e-12)
        worst = max(worst, float(np.abs(num - analytic[name]).max() / scale))
    return worst


def test_c1_gradient_fidelity():
    start = time.perf_counter()
    variants = [("none", False), ("l1", False), ("l2", False), ("l2", True), ("l3", False)]
    worst = {}
    for kind in ("TransE", "ComplEx", "RESCAL", "TuckER"):
        for reg, freq in variants:
            for reciprocal in (False, True):
                cfg = ModelConfig(kind=kind, entity_dim=4, relation_dim=3 if kind == "TuckER" else None,
                                  reciprocal=reciprocal, regularization=reg, reg_entity=0.02,
                                  reg_relation=0.04, frequency_weighting=freq)
                model = init_model(cfg, 5, 3, seed=7)
                pos = np.array([(0, 0, 1), (2, 1, 3), (4, 2, 0), (1, 1, 4)])
                lists = candidate_lists(model, pos, TrainConfig(negatives_per_direction=3),
                                        np.random.default_rng(1))
                stats = TrainingStats(np.array([3.0, 1.0, 2.0, 5.0, 1.0]),
                                      np.arange(1.0, 1.0 + model.relation.shape[0]))
                worst[(kind, reg, freq, reciprocal)] = fd_error(model, lists, stats)
    elapsed = time.perf_counter() - start
    top = max(worst.values())
    ok = top < 1e-5 and elapsed < 10
    record(1, ok, f"max relative error {top:.2e} over {len(worst)} configurations, {elapsed:.1f}s")
    assert top < 1e-5
    assert elapsed < 10


# -- 2 -----------------------------------------------------------------------------

def brute_metrics(rows):
    """rows: (original, expected, prediction) triples; plain loops over the definitions."""
    def f1(subset):
        tp = sum(1 for o, y, p in subset if y == 1 and p == 1)
        fp = sum(1 for o, y, p in subset if y == 0 and p == 1)
        fn = sum(1 for o, y, p in subset if y == 1 and p == 0)
        return 1.0 if tp + fp + fn == 0 else 2 * tp / (2 * tp + fp + fn)
    changed = [(o, y, p) for o, y, p in rows if o != y]
    acc = None if not changed else sum(1 for _, y, p in changed if y == p) / len(changed)
    return f1(rows), acc, f1([(o, y, p) for o, y, p in rows if o == y])


def test_c2_metric_oracle():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(1, 80))
        rows = [tuple(int(v) for v in r) for r in rng.integers(0, 2, size=(n, 3))]
        preds = [LabeledPrediction("near", *r) for r in rows]
        want = brute_metrics(rows)
        got = (overall_f1(preds), changed_accuracy(preds), unchanged_f1(preds))
        for g, w in zip(got, want):
            assert (g is None) == (w is None)
            if g is not None:
                worst = max(worst, abs(g - w))
    record("2a", worst <= 1e-12, f"1000 random sets, max deviation from brute force {worst:.1e}")
    assert worst <= 1e-12


def machine_labelled(n_instances):
    out = []
    for _ in range(n_instances):
        out.append(LabeledPrediction("inference", 0, 1, 1, "inference"))
        out += [LabeledPrediction("near", 1, 1, 1, "near1"), LabeledPrediction("near", 1, 1, 1, "near2"),
                LabeledPrediction("far", 1, 1, 1, "far")]
        for src in ("inference", "near1", "near2", "far"):
            out += [LabeledPrediction(c, 0, 0, 1, src)
                    for c in ("head_corruption", "relation_corruption", "tail_corruption")]
    return out


def test_c2_all_positive_closed_form():
    preds = machine_labelled(7)
    got = unchanged_f1(preds)
    assert changed_accuracy(preds) == 1.0
    # 3 positives, 12 negatives per instance in the unchanged set
    closed = 2 * (3 / 15) * 1 / ((3 / 15) + 1)
    record("2b", got == 0.375,
           f"all-positive unchanged F1 = {got!r}; closed form 2p/(p+1) at p=3/15 gives {closed!r};"
           " required 0.375")
    assert got == 0.375


# -- 3 -----------------------------------------------------------------------------

def toy_rules(kg, planted_rule):
    r = kg.relation_index
    cycle = [("noise0", "noise1", "noise2"), ("noise1", "noise2", "noise0"), ("noise2", "noise0", "noise1")]
    extra = [CompositionRule(f"noise{i}", r[a], r[b], r[c]) for i, (a, b, c) in enumerate(cycle)]
    return [planted_rule, *extra]


def check_generated(kg, rules, typed, config, tmp_path, n_valid_rules):
    instances, _ = generate_dataset(kg, rules, config)
    problems = validate_dataset(kg, rules, instances, typed)
    sizes_ok = all(len(i.cases) == 16 for i in instances)
    split = split_valid_test(instances, n_valid_rules, seed=config.seed)
    disjoint = not ({i.cf for i in split.valid} & {i.cf for i in split.test})
    paths = []
    for k in range(2):
        again, _ = generate_dataset(kg, rules, config) if k else (instances, None)
        p = tmp_path / f"run{k}.jsonl"
        write_dataset(p, again, kg)
        paths.append(p)
    lines = paths[0].read_text().count("\n")
    identical = paths[0].read_bytes() == paths[1].read_bytes()
    return instances, split, problems, sizes_ok and lines % 16 == 0, disjoint, identical


def test_c3_generator_validity_toy(tmp_path):
    total = bad = 0
    flags = []
    for seed in range(10):
        kg, rule = toy_kg(seed)
        rules = toy_rules(kg, rule)
        d = tmp_path / str(seed)
        d.mkdir()
        insts, split, problems, sized, disjoint, identical = check_generated(
            kg, rules, {kg.relation_index["r1"]}, GenConfig(per_atom=4, seed=seed), d, 2)
        total += len(insts)
        bad += len(problems)
        flags.append(sized and disjoint and identical and len(split.valid_rules) == 2)
    ok = bad == 0 and total > 0 and all(flags)
    record("3 (toy)", ok, f"{total} instances over 10 KGs, {bad} invalid, structure/split/rerun checks"
           f" {sum(flags)}/10")
    assert bad == 0 and total > 0
    assert all(flags)


@pytest.mark.skipif(not CODEX, reason="set CFKGR_CODEX_DIR to run on CoDEx-S")
def test_c3_generator_validity_codex_s(tmp_path):
    root = Path(CODEX) / "codex-s"
    kg = load_kg_dir(root)
    rules = benchgen.load_rules(root / "rules.tsv", kg)
    typed = {kg.relation_index[r] for r in ("P361", "P463") if r in kg.relation_index}
    insts, split, problems, sized, disjoint, identical = check_generated(
        kg, rules, typed, GenConfig(per_atom=25, seed=0), tmp_path, 5)
    ok = not problems and sized and disjoint and identical and len(split.valid_rules) == 5
    record("3 (CoDEx-S)", ok, f"{len(insts)} instances, {len(problems)} invalid,"
           f" {len(split.valid_rules)} validation rules")
    assert ok


# -- 4, 5, 6 -------------------------------------------------------------------------

PLANTED_MODEL = ModelConfig(kind="ComplEx", entity_dim=64, reciprocal=True, regularization="l3",
                            reg_entity=3e-6, reg_relation=3e-6, dropout_entity=0.5, dropout_relation=0.5)
PLANTED_TRAIN = TrainConfig(epochs=200, batch_size=512, optimizer="Adagrad", learning_rate=0.1, seed=0)


@pytest.fixture(scope="module")
def planted():
    p = planted_rule_kg(PlantedSpec(seed=0))
    start = time.perf_counter()
    model = train(p.kg, PLANTED_MODEL, PLANTED_TRAIN).model
    thresholds = tune(model, p.kg.valid, synth_negatives(p.kg.valid, p.kg, substream(0, "synth-negatives")))
    return p, model, thresholds, time.perf_counter() - start


def test_c4_planted_rule_learning(planted):
    p, model, th, elapsed = planted
    kg = p.kg
    test_inferences = kg.test[kg.test[:, 1] == p.rule.r3]
    acc = float(classify(model, th, test_inferences).mean())
    ok = acc >= 0.9 and elapsed < 120
    record(4, ok, f"{acc:.3f} of {len(test_inferences)} held-out test inferences accepted;"
           f" training + tuning {elapsed:.1f}s")
    assert acc >= 0.9
    assert elapsed < 120


@pytest.fixture(scope="module")
def couldd_runs(planted):
    p, model, th, _ = planted
    kg = p.kg
    test_set, _ = generate_dataset(kg, [p.rule], GenConfig(per_atom=25, seed=0))
    # hyperparameters are chosen on separately seeded scenarios, never on the test scenarios
    tune_set, _ = generate_dataset(kg, [p.rule], GenConfig(per_atom=25, seed=1000))
    taken = {i.cf for i in test_set}
    tune_set = [i for i in tune_set if i.cf not in taken]
    best, _ = couldd.grid_search(model, kg, tune_set, th, couldd.CoulddConfig(repeats=1),
                                 samples=(0, 127))
    cfg = couldd.CoulddConfig(learning_rate=best.learning_rate, additional_samples=best.additional_samples,
                              repeats=5, seed=0)
    run = couldd.evaluate_dataset(model, kg, test_set, th, cfg)
    null = couldd.evaluate_dataset(model, kg, test_set, th,
                                   couldd.CoulddConfig(learning_rate=0.0, additional_samples=0, repeats=1))
    return test_set, cfg, run, null


def test_c5_couldd_trend(couldd_runs):
    test_set, cfg, run, null = couldd_runs
    base = run.baseline
    gain = run.summary["changed_accuracy"]["mean"] - base.changed_accuracy
    drop = base.unchanged_f1 - run.summary["unchanged_f1"]["mean"]
    a, b = null.baseline.to_dict(), null.repeats[0].to_dict()
    a["extra"] = b["extra"] = {}
    reproduces = a == b
    ok = len(test_set) == 50 and gain >= 0.10 and drop <= 0.03 and reproduces
    record(5, ok, f"{len(test_set)} scenarios, lr={cfg.learning_rate} N={cfg.additional_samples}:"
           f" changed accuracy {base.changed_accuracy:.3f} -> {base.changed_accuracy + gain:.3f}"
           f" ({100 * gain:+.1f} pts), unchanged F1 {base.unchanged_f1:.3f} ->"
           f" {base.unchanged_f1 - drop:.3f} ({-100 * drop:+.1f} pts); null run reproduces baseline: {reproduces}")
    assert len(test_set) == 50
    assert reproduces
    assert gain >= 0.10
    assert drop <= 0.03


def test_c6_early_stop_contract(planted, couldd_runs):
    p, model, th, _ = planted
    test_set, cfg, run, _ = couldd_runs
    by_id = {i.instance_id: i for i in test_set}
    stats = TrainingStats.from_kg(p.kg, model.config.reciprocal)
    within = verified = accepted = 0
    for sc in run.scenarios:
        inst = by_id[sc["instance_id"]]
        mu = th.lookup(inst.cf.relation)
        within += sc["iterations_used"] <= 20 and all(s < mu for s in sc["cf_scores"][:-1])
        if sc["cf_accepted"]:
            accepted += 1
            # replay the adaptation and score the counterfactual on the final parameters
            rng = substream(cfg.seed, "couldd", sc["repeat"], inst.instance_id)
            res = couldd.adapt(model, p.kg, inst.cf, th, cfg, rng, stats=stats)
            verified += res.model.score_one(inst.cf) >= mu and res.iterations_used == sc["iterations_used"]
    n = len(run.scenarios)
    ok = within == n and verified == accepted
    record(6, ok, f"{within}/{n} scenarios within 20 iterations without a premature stop;"
           f" stop condition re-verified on {verified}/{accepted} accepted")
    assert ok


# -- 7 -----------------------------------------------------------------------------

def exhaustive_accuracy(scores, labels):
    u = np.unique(scores)
    cands = [-np.inf, *((u[:-1] + u[1:]) / 2), np.inf]
    return max(float(np.mean((scores >= c) == labels)) for c in cands)


def test_c7_threshold_optimality():
    rng = np.random.default_rng(77)
    mismatches = checked = 0
    for _ in range(200):
        n_ent, n_rel = 12, int(rng.integers(1, 5))
        model = init_model(ModelConfig(kind="TransE", entity_dim=1), n_ent, n_rel, seed=0)
        # coarse values create ties; score = -|e_h + w_r - e_t|
        model.entity[:, 0] = rng.integers(-6, 7, size=n_ent) / 2
        model.relation[:, 0] = rng.integers(-3, 4, size=n_rel) / 2
        trip = np.stack([rng.integers(n_ent, size=60), rng.integers(n_rel, size=60),
                         rng.integers(n_ent, size=60)], axis=1)
        labels = rng.random(60) < 0.5
        th = tune(model, trip[labels], trip[~labels])
        scores = model.score(trip)
        for rel, mu in th.per_relation.items():
            m = trip[:, 1] == rel
            tuned = float(np.mean((scores[m] >= mu) == labels[m]))
            checked += 1
            mismatches += abs(tuned - exhaustive_accuracy(scores[m], labels[m])) > 1e-12
            assert best_threshold(scores[m], labels[m])[0] == mu
    record(7, mismatches == 0, f"{checked} relation thresholds over 200 score sets, {mismatches} suboptimal")
    assert mismatches == 0


# -- 8 -----------------------------------------------------------------------------

@pytest.mark.skipif(not CODEX, reason="set CFKGR_CODEX_DIR to run on CoDEx-M")
def test_c8_filtered_inference_count():
    root = Path(CODEX) / "codex-m"
    kg = load_kg_dir(root)
    rules = benchgen.load_rules(root / "rules.tsv", kg)
    triples, cover = benchgen.filter_inferable(kg, rules, 5)
    kept = sum(1 for v in cover.values() if v >= 5)
    ok = len(triples) == 551 and kept == 10
    record(8, ok, f"{len(triples)} filtered triples from {kept} rules")
    assert ok
