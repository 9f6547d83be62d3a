"""Negative-sampling cross-entropy training with sparse Adam/Adagrad updates."""
from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .kg import KnowledgeGraph, Triple
from .models import EmbeddingModel, ModelConfig, SparseGrad, batch_view, init_model, regularization

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 256
    optimizer: str = "Adagrad"
    learning_rate: float = 0.1
    negatives_per_direction: int = 50
    seed: int = 0
    filter_negatives: bool = False

    def __post_init__(self):
        if self.negatives_per_direction < 1:
            raise ValueError("negatives_per_direction must be >= 1")
        if self.optimizer.lower() not in ("adam", "adagrad"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        return cls(**{k: v for k, v in data.items() if k in cls.__dataclass_fields__})


class TrainingDiverged(RuntimeError):
    def __init__(self, message, triples=None, trace=None):
        super().__init__(message)
        self.triples = triples
        self.trace = trace or []


# -- negative sampling ------------------------------------------------------------

def corrupt(triple, direction: str, count: int, entity_pool, rng: np.random.Generator) -> list[Triple]:
    """``count`` corruptions of one slot, drawn uniformly from the pool minus the original entity."""
    h, r, t = triple
    original = h if direction == "head" else t
    if direction not in ("head", "tail"):
        raise ValueError(f"direction must be head or tail, not {direction!r}")
    pool = np.asarray(sorted(set(entity_pool) - {original}), dtype=np.int64)
    if not len(pool):
        raise ValueError("entity pool has no entity other than the original")
    draws = pool[rng.integers(0, len(pool), size=count)].tolist()
    if direction == "head":
        return [Triple(e, r, t) for e in draws]
    return [Triple(h, r, e) for e in draws]


def corrupt_ids(original: np.ndarray, count: int, n_entities: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform draws over ``range(n_entities)`` excluding ``original[i]``, shape (len(original), count)."""
    if n_entities < 2:
        raise ValueError("need at least two entities to corrupt")
    draws = rng.integers(0, n_entities - 1, size=(len(original), count))
    return draws + (draws >= original[:, None])


# -- loss -------------------------------------------------------------------------

@dataclass
class TrainingStats:
    """Training-set frequencies used by frequency-weighted regularisation."""

    entity_freq: np.ndarray
    relation_freq: np.ndarray

    @classmethod
    def from_kg(cls, kg: KnowledgeGraph, reciprocal: bool = False) -> "TrainingStats":
        ent = np.bincount(kg.train[:, [0, 2]].ravel(), minlength=kg.n_entities).astype(float)
        rel = np.bincount(kg.train[:, 1], minlength=kg.n_relations).astype(float)
        if reciprocal:
            rel = np.concatenate([rel, rel])
        return cls(ent, rel)


def candidate_lists(model: EmbeddingModel, positives: np.ndarray, config: TrainConfig,
                    rng: np.random.Generator, kg: KnowledgeGraph | None = None) -> np.ndarray:
    """Scored triples for every list, shape (2B, K+1, 3); column 0 holds the positive.

    Lists ``0..B-1`` corrupt tails, ``B..2B-1`` corrupt heads. Reciprocal models
    score head lists as tail predictions of the reversed triple.
    """
    pos = np.asarray(positives, dtype=np.int64).reshape(-1, 3)
    k = config.negatives_per_direction
    h, r, t = pos[:, 0], pos[:, 1], pos[:, 2]
    new_t = corrupt_ids(t, k, model.n_entities, rng)
    new_h = corrupt_ids(h, k, model.n_entities, rng)
    if config.filter_negatives:
        if kg is None:
            raise ValueError("filter_negatives needs the knowledge graph")
        _refilter(new_t, h, r, t, "tail", model.n_entities, kg, rng)
        _refilter(new_h, h, r, t, "head", model.n_entities, kg, rng)
    B = len(pos)
    tail_lists = np.empty((B, k + 1, 3), dtype=np.int64)
    tail_lists[:, :, 0] = h[:, None]
    tail_lists[:, :, 1] = r[:, None]
    tail_lists[:, 0, 2] = t
    tail_lists[:, 1:, 2] = new_t
    head_lists = np.empty_like(tail_lists)
    if model.config.reciprocal:
        head_lists[:, :, 0] = t[:, None]
        head_lists[:, :, 1] = (r + model.n_relations)[:, None]
        head_lists[:, 0, 2] = h
        head_lists[:, 1:, 2] = new_h
    else:
        head_lists[:, 0, 0] = h
        head_lists[:, 1:, 0] = new_h
        head_lists[:, :, 1] = r[:, None]
        head_lists[:, :, 2] = t[:, None]
    return np.concatenate([tail_lists, head_lists])


def _refilter(draws, h, r, t, slot, n_entities, kg, rng, max_tries=100):
    for i in range(draws.shape[0]):
        for j in range(draws.shape[1]):
            for _ in range(max_tries):
                cand = (draws[i, j], r[i], t[i]) if slot == "head" else (h[i], r[i], draws[i, j])
                if Triple(*map(int, cand)) not in kg.fact_set:
                    break
                orig = h[i] if slot == "head" else t[i]
                draws[i, j] = corrupt_ids(np.array([orig]), 1, n_entities, rng)[0, 0]


def regularization_occurrences(lists: np.ndarray):
    """Entity and relation rows of the positive in every candidate list."""
    first = lists[:, 0, :]
    return first[:, [0, 2]].ravel(), first[:, 1]


def loss_and_grad(model: EmbeddingModel, positives, config: TrainConfig, rng: np.random.Generator,
                  stats: TrainingStats | None = None, kg: KnowledgeGraph | None = None,
                  lists: np.ndarray | None = None) -> tuple[float, SparseGrad]:
    """Mean softmax cross-entropy of each positive within its candidate lists, plus penalty.

    ``lists`` may be passed to reuse a fixed set of candidates (e.g. in tests).
    """
    if lists is None:
        pos = np.asarray(positives, dtype=np.int64).reshape(-1, 3)
        if not len(pos):
            return 0.0, SparseGrad.empty(model)
        lists = candidate_lists(model, pos, config, rng, kg)
    n_lists, width, _ = lists.shape
    flat = lists.reshape(-1, 3)
    view = batch_view(model, flat[:, 0], flat[:, 1], flat[:, 2], train=True, rng=rng)
    scores = view.scores().reshape(n_lists, width)
    top = scores.max(axis=1, keepdims=True)
    shifted = np.exp(scores - top)
    denom = shifted.sum(axis=1, keepdims=True)
    per_list = (np.log(denom[:, 0]) + top[:, 0]) - scores[:, 0]
    ce = float(per_list.mean())
    weights = shifted / denom
    weights[:, 0] -= 1.0
    weights /= n_lists
    grad = view.grad(weights.ravel())
    ent_occ, rel_occ = regularization_occurrences(lists)
    penalty, reg_grad = regularization(
        model, ent_occ, rel_occ,
        None if stats is None else stats.entity_freq,
        None if stats is None else stats.relation_freq)
    loss = ce + penalty
    if not math.isfinite(loss):
        bad = [tuple(map(int, row)) for row in lists[:, 0, :][~np.isfinite(per_list)]]
        raise TrainingDiverged(f"non-finite loss {loss}", triples=bad or [tuple(map(int, r)) for r in lists[:, 0, :]])
    if not reg_grad.is_empty():
        grad = grad + reg_grad
    return loss, grad


# -- optimizers -------------------------------------------------------------------

@dataclass
class OptimizerState:
    """Per-parameter accumulators, allocated on first update of each table."""

    kind: str
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float | None = None
    slots: dict = field(default_factory=dict)
    steps: dict = field(default_factory=dict)

    def __post_init__(self):
        self.kind = self.kind.lower()
        if self.kind not in ("adam", "adagrad"):
            raise ValueError(f"unknown optimizer {self.kind!r}")
        if self.eps is None:
            self.eps = 1e-8 if self.kind == "adam" else 1e-10

    def _slot(self, name, shape):
        if name not in self.slots:
            if self.kind == "adam":
                self.slots[name] = (np.zeros(shape), np.zeros(shape))
            else:
                self.slots[name] = (np.zeros(shape),)
            self.steps[name] = 0
        return self.slots[name]

    def _update(self, name, param, rows, g, lr):
        """Update ``param[rows]`` (or the whole array when rows is None) in place."""
        slot = self._slot(name, param.shape)
        sel = slice(None) if rows is None else rows
        if self.kind == "adagrad":
            acc = slot[0]
            acc[sel] += g * g
            param[sel] -= lr * g / (np.sqrt(acc[sel]) + self.eps)
            return
        m, v = slot
        self.steps[name] += 1
        step = self.steps[name]
        m[sel] = self.beta1 * m[sel] + (1 - self.beta1) * g
        v[sel] = self.beta2 * v[sel] + (1 - self.beta2) * g * g
        m_hat = m[sel] / (1 - self.beta1 ** step)
        v_hat = v[sel] / (1 - self.beta2 ** step)
        param[sel] -= lr * m_hat / (np.sqrt(v_hat) + self.eps)


def apply_update(model: EmbeddingModel, state: OptimizerState, grad: SparseGrad, lr: float) -> None:
    """Apply one optimizer step to the touched rows of ``model`` in place."""
    if len(grad.entity_rows):
        state._update("entity", model.entity, grad.entity_rows, grad.entity, lr)
    if len(grad.relation_rows):
        state._update("relation", model.relation, grad.relation_rows, grad.relation, lr)
    if grad.core is not None and model.core is not None:
        state._update("core", model.core, None, grad.core, lr)


# -- training loop ---------------------------------------------------------------------

@dataclass
class TrainResult:
    model: EmbeddingModel
    trace: list[dict]


def train(kg: KnowledgeGraph, model_config: ModelConfig, train_config: TrainConfig,
          progress: bool = False) -> TrainResult:
    """Pretrain a model on ``kg.train``; deterministic given ``train_config.seed``."""
    if not len(kg.train):
        raise ValueError("knowledge graph has an empty train split")
    model = init_model(model_config, kg.n_entities, kg.n_relations, seed=train_config.seed)
    model.meta = {"train": asdict(train_config)}
    stats = TrainingStats.from_kg(kg, model_config.reciprocal)
    state = OptimizerState(train_config.optimizer)
    rng = np.random.default_rng(train_config.seed + 1)
    trace: list[dict] = []
    n = len(kg.train)
    bs = train_config.batch_size
    for epoch in range(1, train_config.epochs + 1):
        start = time.perf_counter()
        order = rng.permutation(n)
        total = 0.0
        for lo in range(0, n, bs):
            batch = kg.train[order[lo:lo + bs]]
            try:
                loss, grad = loss_and_grad(model, batch, train_config, rng, stats, kg)
            except TrainingDiverged as exc:
                exc.trace = trace
                raise
            apply_update(model, state, grad, train_config.learning_rate)
            total += loss * len(batch)
        trace.append({"epoch": epoch, "mean_loss": total / n,
                      "wall_seconds": time.perf_counter() - start})
        if progress:
            log.info("epoch %d loss %.5f", epoch, trace[-1]["mean_loss"])
    return TrainResult(model, trace)


def write_trace(trace: list[dict], path) -> None:
    """Per-epoch loss CSV. Wall time stays out so reruns are byte-identical."""
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["epoch", "mean_loss"])
        writer.writeheader()
        for row in trace:
            writer.writerow({"epoch": row["epoch"], "mean_loss": repr(row["mean_loss"])})
