"""Per-scenario fine-tuning of a pretrained model on a hypothetical triple.

Each scenario copies the pretrained parameters, takes up to ``E`` optimizer
steps on the counterfactual plus ``N`` sampled training edges, and stops as
soon as the counterfactual clears its relation threshold. The adapted copy
then classifies the scenario's test cases with the frozen thresholds.
"""
from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .benchgen import CfkgrInstance
from .calibration import ThresholdSet
from .kg import KnowledgeGraph, Triple
from .metrics import EvalReport, LabeledPrediction, evaluate, summarize
from .models import EmbeddingModel
from .seeding import substream
from .trainer import OptimizerState, TrainConfig, TrainingDiverged, TrainingStats, apply_update, loss_and_grad

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class CoulddConfig:
    max_iterations: int = 20
    additional_samples: int = 127
    learning_rate: float = 0.1
    negatives_per_direction: int = 50
    repeats: int = 5
    seed: int = 0
    optimizer: str | None = None  # None: reuse the pretraining optimizer

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.additional_samples < 0:
            raise ValueError("additional_samples must be >= 0")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")


@dataclass
class AdaptationResult:
    model: EmbeddingModel
    iterations_used: int
    cf_accepted: bool
    cf_scores: list[float]
    """Eval-mode score of the counterfactual after each step."""
    case_scores: list[float] = field(default_factory=list)
    case_predictions: list[int] = field(default_factory=list)
    diverged: bool = False


def _train_config(model: EmbeddingModel, config: CoulddConfig) -> TrainConfig:
    opt = config.optimizer or model.meta.get("train", {}).get("optimizer", "Adagrad")
    return TrainConfig(optimizer=opt, learning_rate=config.learning_rate,
                       negatives_per_direction=config.negatives_per_direction)


def adapt(pristine: EmbeddingModel, kg: KnowledgeGraph, cf, thresholds: ThresholdSet,
          config: CoulddConfig, rng: np.random.Generator, cases=None,
          stats: TrainingStats | None = None) -> AdaptationResult:
    """Adapt a private copy of ``pristine`` to the counterfactual ``cf``.

    ``cases`` (an (n, 3) array) are scored and classified with the adapted
    parameters. On a non-finite loss the scenario falls back to the pristine
    parameters and ``diverged`` is set.
    """
    cf = Triple(*map(int, cf))
    model = pristine.copy()
    tc = _train_config(pristine, config)
    state = OptimizerState(tc.optimizer)
    if stats is None:
        stats = TrainingStats.from_kg(kg, pristine.config.reciprocal)
    mu = thresholds.lookup(cf.relation)
    cf_row = np.array([cf], dtype=np.int64)
    n_train = len(kg.train)
    cf_scores: list[float] = []
    accepted = diverged = False
    for _ in range(config.max_iterations):
        sampled = kg.train[rng.integers(n_train, size=config.additional_samples)]
        batch = np.concatenate([cf_row, sampled])
        try:
            _, grad = loss_and_grad(model, batch, tc, rng, stats, kg)
        except TrainingDiverged:
            log.warning("non-finite loss adapting to %s; using pristine predictions", cf)
            model, diverged = pristine, True
            break
        apply_update(model, state, grad, tc.learning_rate)
        cf_scores.append(float(model.score(cf_row)[0]))
        if cf_scores[-1] >= mu:
            accepted = True
            break
    result = AdaptationResult(model, len(cf_scores), accepted, cf_scores, diverged=diverged)
    if cases is not None:
        cases = np.asarray(cases, dtype=np.int64).reshape(-1, 3)
        scores = model.score(cases) if len(cases) else np.empty(0)
        result.case_scores = scores.tolist()
        result.case_predictions = (scores >= thresholds.lookup_many(cases[:, 1])).astype(int).tolist()
    return result


def _labeled(inst: CfkgrInstance, predictions) -> list[LabeledPrediction]:
    return [LabeledPrediction(c.kind, c.original_label, c.expected_label, int(p), c.source_kind)
            for c, p in zip(inst.cases, predictions)]


def _case_array(inst: CfkgrInstance) -> np.ndarray:
    return np.array([c.triple for c in inst.cases], dtype=np.int64)


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("CFKGR_THREADS", "1")))
    except ValueError:
        return 1


@dataclass
class CoulddRun:
    baseline: EvalReport
    repeats: list[EvalReport]
    summary: dict
    scenarios: list[dict]

    def to_dict(self) -> dict:
        return {"baseline": self.baseline.to_dict(),
                "repeats": [r.to_dict() for r in self.repeats],
                "summary": self.summary, "scenarios": self.scenarios}


def evaluate_dataset(pristine: EmbeddingModel, kg: KnowledgeGraph, instances: list[CfkgrInstance],
                     thresholds: ThresholdSet, config: CoulddConfig, workers: int | None = None) -> CoulddRun:
    """Frozen baseline plus ``config.repeats`` COULDD evaluations of every instance."""
    stats = TrainingStats.from_kg(kg, pristine.config.reciprocal)
    baseline_preds: list[LabeledPrediction] = []
    for inst in instances:
        scores = pristine.score(_case_array(inst))
        baseline_preds += _labeled(inst, scores >= thresholds.lookup_many(_case_array(inst)[:, 1]))
    baseline = evaluate(baseline_preds, len(instances))

    def job(args):
        rep, inst = args
        rng = substream(config.seed, "couldd", rep, inst.instance_id)
        res = adapt(pristine, kg, inst.cf, thresholds, config, rng, _case_array(inst), stats)
        return rep, inst, res

    jobs = [(rep, inst) for rep in range(config.repeats) for inst in instances]
    n_workers = workers or worker_count()
    if n_workers > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            results = list(pool.map(job, jobs))
    else:
        results = [job(j) for j in jobs]

    per_repeat: list[list[LabeledPrediction]] = [[] for _ in range(config.repeats)]
    scenarios = []
    for rep, inst, res in results:
        per_repeat[rep] += _labeled(inst, res.case_predictions)
        scenarios.append({"repeat": rep, "instance_id": inst.instance_id,
                          "iterations_used": res.iterations_used, "cf_accepted": res.cf_accepted,
                          "cf_scores": res.cf_scores, "threshold": thresholds.lookup(inst.cf.relation),
                          "diverged": res.diverged})
    reports = [evaluate(p, len(instances), repeat=i) for i, p in enumerate(per_repeat)]
    return CoulddRun(baseline, reports, summarize(reports), scenarios)


ALPHA_GRID = (0.001, 0.01, 0.1, 0.15, 0.2)
SAMPLES_GRID = (0, 127, 255, 511, 1023)


def grid_search(pristine: EmbeddingModel, kg: KnowledgeGraph, instances: list[CfkgrInstance],
                thresholds: ThresholdSet, base: CoulddConfig, alphas=ALPHA_GRID, samples=SAMPLES_GRID):
    """Evaluate every (learning rate, sample count) pair; best by mean overall F1 (first wins ties)."""
    rows = []
    best = None
    for a in alphas:
        for n in samples:
            cfg = CoulddConfig(base.max_iterations, n, a, base.negatives_per_direction,
                               base.repeats, base.seed, base.optimizer)
            run = evaluate_dataset(pristine, kg, instances, thresholds, cfg)
            f1 = run.summary["overall_f1"]["mean"]
            rows.append({"learning_rate": a, "additional_samples": n, **{
                k: v["mean"] for k, v in run.summary.items()}})
            if best is None or f1 > best[0]:
                best = (f1, cfg)
    return best[1], rows
