"""Relation-specific decision thresholds for triple classification."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .kg import KnowledgeGraph, Triple
from .models import EmbeddingModel


@dataclass
class ThresholdSet:
    per_relation: dict[int, float]
    global_threshold: float
    accuracy: dict[int, float] = field(default_factory=dict)

    def lookup(self, relation: int) -> float:
        return self.per_relation.get(int(relation), self.global_threshold)

    def lookup_many(self, relations) -> np.ndarray:
        return np.array([self.lookup(r) for r in np.asarray(relations).tolist()], dtype=float)

    def to_json(self, kg: KnowledgeGraph) -> dict:
        return {"global": self.global_threshold,
                "per_relation": {kg.relations[r]: mu for r, mu in sorted(self.per_relation.items())}}

    def save(self, path, kg: KnowledgeGraph) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(kg), fh, indent=2)

    @classmethod
    def load(cls, path, kg: KnowledgeGraph) -> "ThresholdSet":
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        per = {kg.relation_id(label): float(mu) for label, mu in data["per_relation"].items()}
        return cls(per, float(data["global"]))


def best_threshold(scores, labels) -> tuple[float, float]:
    """Accuracy-maximising cutoff for ``label = score >= cutoff``.

    Candidates are -inf, midpoints between adjacent distinct scores, and +inf;
    ties go to the smallest candidate. Returns ``(cutoff, accuracy)``.
    """
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=bool)
    if not len(scores):
        raise ValueError("cannot tune a threshold on an empty set")
    uniq = np.unique(scores)
    cands = np.concatenate([[-np.inf], (uniq[:-1] + uniq[1:]) / 2.0, [np.inf]])
    pos = np.sort(scores[labels])
    neg = np.sort(scores[~labels])
    # positives at or above the cutoff plus negatives strictly below it
    correct = (len(pos) - np.searchsorted(pos, cands, side="left")) + np.searchsorted(neg, cands, side="left")
    best = int(np.argmax(correct))
    return float(cands[best]), float(correct[best]) / len(scores)


def tune(model: EmbeddingModel, valid_positives, valid_negatives) -> ThresholdSet:
    """Per-relation thresholds from labelled validation triples, scored in the tail direction.

    Relations without validation positives fall back to the global threshold,
    which is tuned the same way over all validation triples pooled.
    """
    pos = np.asarray(valid_positives, dtype=np.int64).reshape(-1, 3)
    neg = np.asarray(valid_negatives, dtype=np.int64).reshape(-1, 3)
    if not len(pos) + len(neg):
        raise ValueError("empty validation set")
    triples = np.concatenate([pos, neg])
    labels = np.concatenate([np.ones(len(pos), bool), np.zeros(len(neg), bool)])
    scores = model.score(triples)
    global_mu, _ = best_threshold(scores, labels)
    per, acc = {}, {}
    for rel in np.unique(pos[:, 1]).tolist():
        mask = triples[:, 1] == rel
        per[rel], acc[rel] = best_threshold(scores[mask], labels[mask])
    return ThresholdSet(per, global_mu, acc)


def synth_negatives(valid_positives, kg: KnowledgeGraph, rng: np.random.Generator,
                    max_tries: int = 1000) -> np.ndarray:
    """One uniform tail corruption per positive, rejected while it lies in the fact set."""
    pos = np.asarray(valid_positives, dtype=np.int64).reshape(-1, 3)
    out = pos.copy()
    for i, (h, r, t) in enumerate(pos.tolist()):
        for _ in range(max_tries):
            cand = int(rng.integers(kg.n_entities))
            if cand != t and Triple(h, r, cand) not in kg.fact_set:
                out[i, 2] = cand
                break
        else:
            raise RuntimeError(f"no tail corruption outside the KG for {(h, r, t)}")
    return out


def classify(model: EmbeddingModel, thresholds: ThresholdSet, triples) -> np.ndarray:
    """1 where the eval-mode tail-direction score reaches the relation threshold."""
    triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    if not len(triples):
        return np.empty(0, dtype=np.int8)
    scores = model.score(triples)
    return (scores >= thresholds.lookup_many(triples[:, 1])).astype(np.int8)
