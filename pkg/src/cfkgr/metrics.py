"""Counterfactual evaluation metrics: overall F1, changed accuracy, unchanged F1."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np

CELLS = ("inference", "inference_h", "inference_r", "inference_t",
         "far", "far_h", "far_r", "far_t",
         "near", "near_h", "near_r", "near_t")
_SLOT = {"head_corruption": "h", "relation_corruption": "r", "tail_corruption": "t"}


class LabeledPrediction(NamedTuple):
    kind: str
    original_label: int
    expected_label: int
    prediction: int
    source_kind: str = ""


def cell_of(kind: str, source_kind: str) -> str:
    """Table cell of a case: the fact kind, suffixed with the corrupted slot."""
    if kind in _SLOT:
        base = "near" if source_kind.startswith("near") else source_kind
        return f"{base}_{_SLOT[kind]}"
    return kind


def _arrays(preds: Sequence[LabeledPrediction]):
    if not len(preds):
        return np.zeros(0, int), np.zeros(0, int), np.zeros(0, int)
    a = np.array([(p.original_label, p.expected_label, p.prediction) for p in preds], dtype=int)
    if not np.isin(a, (0, 1)).all():
        raise ValueError("labels and predictions must be 0 or 1")
    return a[:, 0], a[:, 1], a[:, 2]


def confusion(expected, predicted) -> dict[str, int]:
    y = np.asarray(expected, dtype=bool)
    p = np.asarray(predicted, dtype=bool)
    return {"tn": int((~y & ~p).sum()), "fp": int((~y & p).sum()),
            "fn": int((y & ~p).sum()), "tp": int((y & p).sum())}


def f1_from_counts(tp: int, fp: int, fn: int) -> float:
    """2tp / (2tp + fp + fn); 1.0 when there is nothing positive to find or predict."""
    denom = 2 * tp + fp + fn
    return 1.0 if denom == 0 else 2 * tp / denom


def overall_f1(preds: Sequence[LabeledPrediction]) -> float:
    if not len(preds):
        raise ValueError("no predictions")
    _, y, p = _arrays(preds)
    c = confusion(y, p)
    return f1_from_counts(c["tp"], c["fp"], c["fn"])


def changed_accuracy(preds: Sequence[LabeledPrediction]) -> float | None:
    """Accuracy on cases whose label differs between the original and counterfactual graph."""
    y0, y, p = _arrays(preds)
    changed = y0 != y
    if not changed.any():
        return None
    return float((p[changed] == y[changed]).mean())


def unchanged_f1(preds: Sequence[LabeledPrediction]) -> float:
    y0, y, p = _arrays(preds)
    same = y0 == y
    c = confusion(y[same], p[same])
    return f1_from_counts(c["tp"], c["fp"], c["fn"])


def per_kind_confusion(preds: Iterable[LabeledPrediction]) -> dict[str, dict[str, int]]:
    out = {cell: {"tn": 0, "fp": 0, "fn": 0, "tp": 0} for cell in CELLS}
    for pr in preds:
        cell = out.setdefault(cell_of(pr.kind, pr.source_kind), {"tn": 0, "fp": 0, "fn": 0, "tp": 0})
        cell[_outcome(pr)] += 1
    return out


def _outcome(pr: LabeledPrediction) -> str:
    if pr.expected_label:
        return "tp" if pr.prediction else "fn"
    return "fp" if pr.prediction else "tn"


def per_kind_accuracy(preds: Iterable[LabeledPrediction]) -> dict[str, float | None]:
    acc = {}
    for cell, c in per_kind_confusion(preds).items():
        n = sum(c.values())
        acc[cell] = (c["tp"] + c["tn"]) / n if n else None
    return acc


@dataclass
class EvalReport:
    overall_f1: float
    changed_accuracy: float | None
    unchanged_f1: float
    per_kind: dict[str, dict[str, int]]
    per_kind_accuracy: dict[str, float | None]
    n_instances: int
    n_cases: int
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate(preds: Sequence[LabeledPrediction], n_instances: int, **extra) -> EvalReport:
    return EvalReport(overall_f1(preds), changed_accuracy(preds), unchanged_f1(preds),
                      per_kind_confusion(preds), per_kind_accuracy(preds),
                      n_instances, len(preds), dict(extra))


def summarize(reports: Sequence[EvalReport]) -> dict:
    """Mean and population std of the headline metrics across repeats."""
    out = {}
    for name in ("overall_f1", "changed_accuracy", "unchanged_f1"):
        vals = [getattr(r, name) for r in reports if getattr(r, name) is not None]
        out[name] = ({"mean": float(np.mean(vals)), "std": float(np.std(vals))} if vals
                     else {"mean": None, "std": None})
    return out


def write_report(path, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
