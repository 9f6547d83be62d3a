"""Command-line entry point: ``cfkgr <subcommand> ...``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import benchgen, calibration, couldd, metrics
from .kg import KGFormatError, load_kg_dir, save_kg_dir, write_triples
from .models import ModelConfig, load_checkpoint, save_checkpoint
from .seeding import substream
from .trainer import TrainConfig, TrainingDiverged, train, write_trace

log = logging.getLogger("cfkgr")


class MissingPath(Exception):
    pass


def _existing(path: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise MissingPath(f"path not found: {path}")
    return p


def _load_json(path: str | None) -> dict:
    if path is None:
        return {}
    with open(_existing(path), encoding="utf-8") as fh:
        return json.load(fh)


def _overrides(args, mapping: dict) -> dict:
    """Explicitly passed flags, keyed by config field."""
    return {field: getattr(args, dest) for dest, field in mapping.items() if getattr(args, dest) is not None}


def _load_model_for(kg, path):
    model = load_checkpoint(_existing(path))
    if model.n_entities != kg.n_entities or model.n_relations != kg.n_relations:
        raise ValueError(f"checkpoint {path} has {model.n_entities} entities / {model.n_relations} relations;"
                         f" the KG has {kg.n_entities} / {kg.n_relations}")
    return model


# -- subcommands ------------------------------------------------------------------------

_MODEL_FLAGS = {"kind": "kind", "dim": "entity_dim", "relation_dim": "relation_dim",
                "reciprocal": "reciprocal", "dropout_entity": "dropout_entity",
                "dropout_relation": "dropout_relation", "regularization": "regularization",
                "reg_entity": "reg_entity", "reg_relation": "reg_relation",
                "frequency_weighting": "frequency_weighting"}
_TRAIN_FLAGS = {"epochs": "epochs", "batch_size": "batch_size", "optimizer": "optimizer",
                "lr": "learning_rate", "negatives": "negatives_per_direction", "seed": "seed",
                "filter_negatives": "filter_negatives"}


def cmd_train(args) -> int:
    kg = load_kg_dir(_existing(args.kg))
    cfg = _load_json(args.config)
    model_cfg = ModelConfig.from_dict({"kind": "ComplEx", "entity_dim": 64,
                                       **cfg.get("model", {}), **_overrides(args, _MODEL_FLAGS)})
    train_cfg = TrainConfig.from_dict({**cfg.get("train", {}), **_overrides(args, _TRAIN_FLAGS)})
    try:
        result = train(kg, model_cfg, train_cfg, progress=args.verbose)
    except TrainingDiverged as exc:
        print(f"error: training diverged: {exc}; offending triples: {exc.triples[:5]}", file=sys.stderr)
        if args.trace:
            write_trace(exc.trace, args.trace)
        return 3
    save_checkpoint(result.model, args.out)
    if args.trace:
        write_trace(result.trace, args.trace)
    print(f"saved {args.out} (final loss {result.trace[-1]['mean_loss']:.5f})" if result.trace
          else f"saved {args.out}")
    return 0


def cmd_tune_thresholds(args) -> int:
    kg = load_kg_dir(_existing(args.kg))
    model = _load_model_for(kg, args.model)
    if not len(kg.valid):
        raise ValueError("the KG has no validation triples to tune on")
    negatives = kg.valid_negatives
    if args.synth:
        negatives = calibration.synth_negatives(kg.valid, kg, substream(args.seed, "synth-negatives"))
    elif negatives is None or not len(negatives):
        raise ValueError("the KG has no validation negatives; pass --synth to generate tail corruptions")
    thresholds = calibration.tune(model, kg.valid, negatives)
    thresholds.save(args.out, kg)
    print(f"tuned {len(thresholds.per_relation)} relation thresholds -> {args.out}")
    return 0


def cmd_generate(args) -> int:
    kg = load_kg_dir(_existing(args.kg))
    rules = benchgen.load_rules(_existing(args.rules), kg)
    typed = frozenset(t for t in args.typed_relations.split(",") if t)
    config = benchgen.GenConfig(per_atom=args.per_atom, seed=args.seed,
                                max_attempts=args.max_attempts, typed_relations=typed)
    instances, diagnostics = benchgen.generate_dataset(kg, rules, config)
    split = benchgen.split_valid_test(instances, args.n_valid_rules, args.seed)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    benchgen.write_dataset(out / "valid.jsonl", split.valid, kg)
    benchgen.write_dataset(out / "test.jsonl", split.test, kg)
    diagnostics["split"] = {"valid_rules": split.valid_rules, "test_rules": split.test_rules,
                            "valid_instances": len(split.valid), "test_instances": len(split.test),
                            "duplicate_pairs": split.duplicate_pairs, "warnings": split.warnings}
    with open(out / "diagnostics.json", "w", encoding="utf-8") as fh:
        json.dump(diagnostics, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"{len(split.valid)} validation / {len(split.test)} test scenarios -> {out}")
    return 0


def _couldd_config(args, **changes) -> couldd.CoulddConfig:
    base = dict(max_iterations=args.max_iters, additional_samples=args.samples, learning_rate=args.lr,
                negatives_per_direction=args.negatives, repeats=args.repeats, seed=args.seed,
                optimizer=args.optimizer)
    base.update(changes)
    return couldd.CoulddConfig(**base)


def _scenario_inputs(args):
    kg = load_kg_dir(_existing(args.kg))
    model = _load_model_for(kg, args.model)
    thresholds = calibration.ThresholdSet.load(_existing(args.thresholds), kg)
    instances = benchgen.read_dataset(_existing(args.dataset), kg)
    if not instances:
        raise ValueError(f"dataset {args.dataset} is empty")
    return kg, model, thresholds, instances


def cmd_couldd_eval(args) -> int:
    kg, model, thresholds, instances = _scenario_inputs(args)
    digest = model.digest()
    run = couldd.evaluate_dataset(model, kg, instances, thresholds, _couldd_config(args))
    assert model.digest() == digest, "pretrained parameters were modified"
    payload = {"config": asdict(_couldd_config(args)), **run.to_dict()}
    if not args.keep_scenarios:
        payload.pop("scenarios")
    metrics.write_report(args.out, payload)
    if args.predictions_csv:
        _write_predictions(args.predictions_csv, model, kg, instances, thresholds)
    s = run.summary
    print(f"overall F1 {s['overall_f1']['mean']:.4f}  changed acc {_fmt(s['changed_accuracy']['mean'])}"
          f"  unchanged F1 {s['unchanged_f1']['mean']:.4f}  -> {args.out}")
    return 0


def _write_predictions(path, model, kg, instances, thresholds):
    """Baseline predictions per case, for auditing."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["instance_id", "head", "rel", "tail", "kind", "source_kind",
                    "expected_label", "original_label", "score", "prediction"])
        for inst in instances:
            arr = np.array([c.triple for c in inst.cases], dtype=np.int64)
            scores = model.score(arr)
            preds = scores >= thresholds.lookup_many(arr[:, 1])
            for c, s, p in zip(inst.cases, scores, preds):
                w.writerow([inst.instance_id, *kg.label(c.triple), c.kind, c.source_kind,
                            c.expected_label, c.original_label, repr(float(s)), int(p)])


def cmd_couldd_tune(args) -> int:
    kg, model, thresholds, instances = _scenario_inputs(args)
    alphas = [float(a) for a in args.alphas.split(",")]
    samples = [int(n) for n in args.samples_grid.split(",")]
    best, rows = couldd.grid_search(model, kg, instances, thresholds, _couldd_config(args), alphas, samples)
    metrics.write_report(args.out, {"best": {"learning_rate": best.learning_rate,
                                             "additional_samples": best.additional_samples},
                                    "grid": rows})
    print(f"best lr={best.learning_rate} samples={best.additional_samples} -> {args.out}")
    return 0


def cmd_filter_inferable(args) -> int:
    kg = load_kg_dir(_existing(args.kg))
    rules = benchgen.load_rules(_existing(args.rules), kg)
    triples, cover = benchgen.filter_inferable(kg, rules, args.min_cover)
    write_triples(args.out, kg, triples)
    kept = [rid for rid, n in cover.items() if n >= args.min_cover]
    if args.rule_table:
        with open(args.rule_table, "w", encoding="utf-8") as fh:
            fh.write("rule_id\ttest_cover\tkept\n")
            for rid in sorted(cover):
                fh.write(f"{rid}\t{cover[rid]}\t{int(cover[rid] >= args.min_cover)}\n")
    print(f"{len(triples)} inferable test triples from {len(kept)} rules -> {args.out}")
    return 0


def _fmt(v) -> str:
    return "n/a" if v is None else f"{v:.4f}"


def cmd_report(args) -> int:
    data = _load_json(args.report)
    lines = []
    blocks = [("baseline", data["baseline"])] if "baseline" in data else []
    blocks += [(f"repeat {r.get('extra', {}).get('repeat', i)}", r) for i, r in enumerate(data.get("repeats", []))]
    lines.append(f"{'run':<12}{'overall_f1':>12}{'changed_acc':>13}{'unchanged_f1':>14}")
    for name, r in blocks:
        lines.append(f"{name:<12}{r['overall_f1']:>12.4f}{_fmt(r['changed_accuracy']):>13}{r['unchanged_f1']:>14.4f}")
    if "summary" in data:
        for metric, v in data["summary"].items():
            if v["mean"] is not None:
                lines.append(f"{metric}: {v['mean']:.4f} ± {v['std']:.4f}")
    if args.per_kind and blocks:
        lines.append("")
        lines.append("accuracy by test type")
        for cell in metrics.CELLS:
            vals = "".join(f"{_fmt(r['per_kind_accuracy'].get(cell)):>10}" for _, r in blocks)
            lines.append(f"{cell:<14}{vals}")
    print("\n".join(lines))
    return 0


def cmd_planted(args) -> int:
    from .synthetic import PlantedSpec, planted_rule_kg

    spec = PlantedSpec(n_entities=args.entities, n_instantiations=args.instantiations,
                       n_noise_edges=args.noise_edges, seed=args.seed)
    planted = planted_rule_kg(spec)
    out = Path(args.out_dir)
    save_kg_dir(planted.kg, out)
    benchgen.write_rules(out / "rules.tsv", [planted.rule], planted.kg)
    print(f"planted-rule KG ({planted.kg.counts()['train']} train triples) -> {out}")
    return 0


# -- parser ---------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cfkgr", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="pretrain an embedding model")
    t.add_argument("--kg", required=True, help="KG directory with train/valid/test files")
    t.add_argument("--config", help="JSON file with 'model' and 'train' blocks; flags override it")
    t.add_argument("--kind", choices=["TransE", "ComplEx", "RESCAL", "TuckER"])
    t.add_argument("--dim", type=int, help="entity embedding size")
    t.add_argument("--relation-dim", type=int, help="relation size (TuckER)")
    t.add_argument("--reciprocal", action=argparse.BooleanOptionalAction, default=None)
    t.add_argument("--dropout-entity", type=float)
    t.add_argument("--dropout-relation", type=float)
    t.add_argument("--regularization", choices=["none", "l1", "l2", "l3"])
    t.add_argument("--reg-entity", type=float)
    t.add_argument("--reg-relation", type=float)
    t.add_argument("--frequency-weighting", action=argparse.BooleanOptionalAction, default=None)
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--optimizer", choices=["Adam", "Adagrad"])
    t.add_argument("--lr", type=float, help="learning rate")
    t.add_argument("--negatives", type=int, help="corruptions per direction")
    t.add_argument("--filter-negatives", action=argparse.BooleanOptionalAction, default=None)
    t.add_argument("--seed", type=int)
    t.add_argument("--out", required=True, help="checkpoint path")
    t.add_argument("--trace", help="CSV loss trace path")
    t.set_defaults(func=cmd_train)

    th = sub.add_parser("tune-thresholds", help="tune relation thresholds on the validation split")
    th.add_argument("--kg", required=True)
    th.add_argument("--model", required=True, help="checkpoint path")
    th.add_argument("--synth", action="store_true", help="use one tail corruption per validation triple as negative")
    th.add_argument("--seed", type=int, default=0)
    th.add_argument("--out", required=True, help="thresholds JSON path")
    th.set_defaults(func=cmd_tune_thresholds)

    g = sub.add_parser("generate", help="generate counterfactual scenarios from rules")
    g.add_argument("--kg", required=True)
    g.add_argument("--rules", required=True, help="rules TSV")
    g.add_argument("--per-atom", type=int, default=25, help="scenarios per rule and body atom")
    g.add_argument("--max-attempts", type=int, default=500)
    g.add_argument("--typed-relations", default="P361,P463", help="comma-separated relation labels")
    g.add_argument("--n-valid-rules", type=int, default=5)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out-dir", required=True)
    g.set_defaults(func=cmd_generate)

    def scenario_flags(sp):
        sp.add_argument("--kg", required=True)
        sp.add_argument("--model", required=True)
        sp.add_argument("--thresholds", required=True)
        sp.add_argument("--dataset", required=True, help="scenario JSONL")
        sp.add_argument("--lr", type=float, default=0.1)
        sp.add_argument("--samples", type=int, default=127, help="additional training edges per step")
        sp.add_argument("--max-iters", type=int, default=20)
        sp.add_argument("--repeats", type=int, default=5)
        sp.add_argument("--negatives", type=int, default=50)
        sp.add_argument("--optimizer", choices=["Adam", "Adagrad"], help="default: the checkpoint's")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out", required=True)

    ce = sub.add_parser("couldd-eval", help="evaluate per-scenario adaptation on a dataset")
    scenario_flags(ce)
    ce.add_argument("--predictions-csv", help="write baseline per-case predictions")
    ce.add_argument("--keep-scenarios", action="store_true", help="include per-scenario traces")
    ce.set_defaults(func=cmd_couldd_eval)

    ct = sub.add_parser("couldd-tune", help="grid search learning rate and sample count")
    scenario_flags(ct)
    ct.add_argument("--alphas", default=",".join(map(str, couldd.ALPHA_GRID)))
    ct.add_argument("--samples-grid", default=",".join(map(str, couldd.SAMPLES_GRID)))
    ct.set_defaults(func=cmd_couldd_tune)

    f = sub.add_parser("filter-inferable", help="test triples derivable from train by one rule step")
    f.add_argument("--kg", required=True)
    f.add_argument("--rules", required=True)
    f.add_argument("--min-cover", type=int, default=5)
    f.add_argument("--out", required=True, help="filtered triples TSV")
    f.add_argument("--rule-table", help="per-rule cover TSV")
    f.set_defaults(func=cmd_filter_inferable)

    r = sub.add_parser("report", help="print a couldd-eval report")
    r.add_argument("report")
    r.add_argument("--per-kind", action="store_true", help="add accuracy by test type")
    r.set_defaults(func=cmd_report)

    pl = sub.add_parser("planted", help="write a synthetic KG with one planted composition rule")
    pl.add_argument("--entities", type=int, default=300)
    pl.add_argument("--instantiations", type=int, default=400)
    pl.add_argument("--noise-edges", type=int, default=3000)
    pl.add_argument("--seed", type=int, default=0)
    pl.add_argument("--out-dir", required=True)
    pl.set_defaults(func=cmd_planted)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (MissingPath, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (KGFormatError, ValueError, KeyError, benchgen.SplitError, benchgen.CorruptionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
