"""Embedding models: TransE, ComplEx, RESCAL and TuckER.

Parameter layout per kind (``d`` = entity_dim, ``k`` = relation_dim):

========  ============  ================  ==============
kind      entity row    relation row      core
========  ============  ================  ==============
TransE    d             d                 -
ComplEx   2d (re | im)  2d (re | im)      -
RESCAL    d             d*d (row-major)   -
TuckER    d             k                 d x k x d
========  ============  ================  ==============

Reciprocal models store ``2|R|`` relation rows; row ``r + |R|`` scores the
reversed triple ``(t, r, h)``.
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import kernels

KINDS = ("TransE", "ComplEx", "RESCAL", "TuckER")
REGULARIZERS = {"none": 0, "l1": 1, "l2": 2, "l3": 3}
INIT_STD = 0.1


@dataclass(frozen=True)
class ModelConfig:
    kind: str
    entity_dim: int
    relation_dim: int | None = None
    reciprocal: bool = False
    dropout_entity: float = 0.0
    dropout_relation: float = 0.0
    regularization: str = "none"
    reg_entity: float = 0.0
    reg_relation: float = 0.0
    frequency_weighting: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}; expected one of {KINDS}")
        if self.entity_dim <= 0:
            raise ValueError("entity_dim must be positive")
        if self.relation_dim is not None and self.relation_dim <= 0:
            raise ValueError("relation_dim must be positive")
        if self.regularization not in REGULARIZERS:
            raise ValueError(f"unknown regularization {self.regularization!r}")
        for p in (self.dropout_entity, self.dropout_relation):
            if not 0.0 <= p < 1.0:
                raise ValueError("dropout rates must lie in [0, 1)")

    @property
    def d_r(self) -> int:
        if self.kind == "TuckER":
            return self.relation_dim or self.entity_dim
        return self.entity_dim

    @property
    def entity_width(self) -> int:
        return 2 * self.entity_dim if self.kind == "ComplEx" else self.entity_dim

    @property
    def relation_width(self) -> int:
        if self.kind == "ComplEx":
            return 2 * self.entity_dim
        if self.kind == "RESCAL":
            return self.entity_dim ** 2
        return self.d_r

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        return cls(**{k: v for k, v in data.items() if k in cls.__dataclass_fields__})


@dataclass
class SparseGrad:
    """Gradient restricted to touched rows; ``core`` is dense (TuckER) or None."""

    entity_rows: np.ndarray
    entity: np.ndarray
    relation_rows: np.ndarray
    relation: np.ndarray
    core: np.ndarray | None = None

    @classmethod
    def empty(cls, model: "EmbeddingModel") -> "SparseGrad":
        return cls(np.empty(0, np.int64), np.empty((0, model.entity.shape[1])),
                   np.empty(0, np.int64), np.empty((0, model.relation.shape[1])), None)

    def is_empty(self) -> bool:
        return not len(self.entity_rows) and not len(self.relation_rows) and self.core is None

    def __add__(self, other: "SparseGrad") -> "SparseGrad":
        def merge(rows_a, a, rows_b, b):
            rows, inv = np.unique(np.concatenate([rows_a, rows_b]), return_inverse=True)
            out = np.zeros((len(rows), a.shape[1]))
            np.add.at(out, inv, np.concatenate([a, b]))
            return rows, out

        er, e = merge(self.entity_rows, self.entity, other.entity_rows, other.entity)
        rr, r = merge(self.relation_rows, self.relation, other.relation_rows, other.relation)
        if self.core is None:
            core = other.core
        elif other.core is None:
            core = self.core
        else:
            core = self.core + other.core
        return SparseGrad(er, e, rr, r, core)

    def to_dense(self, model: "EmbeddingModel") -> dict[str, np.ndarray]:
        out = {"entity": np.zeros_like(model.entity), "relation": np.zeros_like(model.relation)}
        out["entity"][self.entity_rows] = self.entity
        out["relation"][self.relation_rows] = self.relation
        if model.core is not None:
            out["core"] = np.zeros_like(model.core) if self.core is None else self.core.copy()
        return out


@dataclass(eq=False)
class EmbeddingModel:
    config: ModelConfig
    n_entities: int
    n_relations: int
    entity: np.ndarray
    relation: np.ndarray
    core: np.ndarray | None = None
    seed: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        rows = 2 * self.n_relations if self.config.reciprocal else self.n_relations
        if self.entity.shape != (self.n_entities, self.config.entity_width):
            raise ValueError(f"entity table has shape {self.entity.shape}")
        if self.relation.shape != (rows, self.config.relation_width):
            raise ValueError(f"relation table has shape {self.relation.shape}, expected {(rows, self.config.relation_width)}")
        if (self.config.kind == "TuckER") != (self.core is not None):
            raise ValueError("a core tensor is required for TuckER and only for TuckER")

    def parameters(self) -> dict[str, np.ndarray]:
        params = {"entity": self.entity, "relation": self.relation}
        if self.core is not None:
            params["core"] = self.core
        return params

    def copy(self) -> "EmbeddingModel":
        return EmbeddingModel(self.config, self.n_entities, self.n_relations, self.entity.copy(),
                              self.relation.copy(), None if self.core is None else self.core.copy(),
                              self.seed, dict(self.meta))

    def digest(self) -> str:
        sha = hashlib.sha256(json.dumps(asdict(self.config), sort_keys=True).encode())
        for arr in self.parameters().values():
            sha.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        return sha.hexdigest()

    def reciprocal_row(self, relation):
        if not self.config.reciprocal:
            raise ValueError("model has no reciprocal relation rows")
        return np.asarray(relation) + self.n_relations

    def score(self, triples, *, train: bool = False, rng: np.random.Generator | None = None) -> np.ndarray:
        """Scores of an (n, 3) array of triples (tail direction)."""
        triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
        return batch_view(self, triples[:, 0], triples[:, 1], triples[:, 2], train=train, rng=rng).scores()

    def score_one(self, triple, *, train: bool = False, rng=None) -> float:
        return float(self.score([triple], train=train, rng=rng)[0])


def init_model(config: ModelConfig, n_entities: int, n_relations: int, seed: int = 0) -> EmbeddingModel:
    """Draw all parameters i.i.d. from N(0, 0.1^2); TransE entities renormalised once."""
    rng = np.random.default_rng(seed)
    rows = 2 * n_relations if config.reciprocal else n_relations
    entity = rng.normal(0.0, INIT_STD, size=(n_entities, config.entity_width))
    relation = rng.normal(0.0, INIT_STD, size=(rows, config.relation_width))
    core = None
    if config.kind == "TuckER":
        d, k = config.entity_dim, config.d_r
        core = rng.normal(0.0, INIT_STD, size=(d, k, d))
    if config.kind == "TransE":
        entity /= np.linalg.norm(entity, axis=1, keepdims=True)
    return EmbeddingModel(config, n_entities, n_relations, entity, relation, core, seed)


def _dropout_mask(shape, rate, rng):
    if rate <= 0.0:
        return None
    return (rng.random(shape) >= rate) / (1.0 - rate)


class BatchView:
    """Compacted, optionally dropout-masked view of the rows a batch touches.

    One mask is drawn per distinct row per view, so every occurrence of an
    embedding inside one loss evaluation sees the same mask.
    """

    def __init__(self, model: EmbeddingModel, h, r, t, *, train=False, rng=None):
        h, r, t = (np.asarray(a, dtype=np.int64).ravel() for a in (h, r, t))
        if not (len(h) == len(r) == len(t)):
            raise ValueError("index arrays differ in length")
        if len(h):
            if min(h.min(), t.min()) < 0 or max(h.max(), t.max()) >= model.n_entities:
                raise IndexError("entity id out of range")
            if r.min() < 0 or r.max() >= model.relation.shape[0]:
                raise IndexError("relation id out of range")
        self.model = model
        self.entity_rows, inv = np.unique(np.concatenate([h, t]), return_inverse=True)
        self.h, self.t = inv[:len(h)], inv[len(h):]
        self.relation_rows, self.r = np.unique(r, return_inverse=True)
        cfg = model.config
        self.ent = model.entity[self.entity_rows]
        self.rel = model.relation[self.relation_rows]
        self.ent_mask = self.rel_mask = None
        if train:
            if rng is None:
                raise ValueError("train mode needs an rng for dropout")
            self.ent_mask = _dropout_mask(self.ent.shape, cfg.dropout_entity, rng)
            self.rel_mask = _dropout_mask(self.rel.shape, cfg.dropout_relation, rng)
            if self.ent_mask is not None:
                self.ent = self.ent * self.ent_mask
            if self.rel_mask is not None:
                self.rel = self.rel * self.rel_mask
        self._mats = None

    def _matrices(self):
        if self._mats is None:
            cfg = self.model.config
            if cfg.kind == "RESCAL":
                d = cfg.entity_dim
                self._mats = np.ascontiguousarray(self.rel.reshape(-1, d, d))
            else:
                # W x_2 r for every touched relation: (n, d, d)
                self._mats = np.ascontiguousarray(np.einsum("ijk,nj->nik", self.model.core, self.rel))
        return self._mats

    def scores(self) -> np.ndarray:
        if not len(self.h):
            return np.empty(0)
        k = kernels.backend
        kind = self.model.config.kind
        if kind == "TransE":
            return k.transe_score(self.ent, self.rel, self.h, self.r, self.t)
        if kind == "ComplEx":
            return k.complex_score(self.ent, self.rel, self.h, self.r, self.t)
        return k.bilinear_score(self.ent, self._matrices(), self.h, self.r, self.t)

    def grad(self, weights) -> SparseGrad:
        """Gradient of ``sum_i weights[i] * score_i`` w.r.t. the raw parameters."""
        model = self.model
        if not len(self.h):
            return SparseGrad.empty(model)
        w = np.ascontiguousarray(weights, dtype=np.float64)
        k = kernels.backend
        kind = model.config.kind
        core = None
        if kind == "TransE":
            de, dr = k.transe_grad(self.ent, self.rel, self.h, self.r, self.t, w)
        elif kind == "ComplEx":
            de, dr = k.complex_grad(self.ent, self.rel, self.h, self.r, self.t, w)
        else:
            de, dm = k.bilinear_grad(self.ent, self._matrices(), self.h, self.r, self.t, w)
            if kind == "RESCAL":
                dr = dm.reshape(len(self.relation_rows), -1)
            else:
                dr = np.einsum("ijk,nik->nj", model.core, dm)
                core = np.einsum("nik,nj->ijk", dm, self.rel)
        if self.ent_mask is not None:
            de = de * self.ent_mask
        if self.rel_mask is not None:
            dr = dr * self.rel_mask
        return SparseGrad(self.entity_rows, de, self.relation_rows, dr, core)


def batch_view(model, h, r, t, *, train=False, rng=None) -> BatchView:
    return BatchView(model, h, r, t, train=train, rng=rng)


def grad_batch(model: EmbeddingModel, triples, weights, *, train=False, rng=None) -> SparseGrad:
    """Sparse gradient of ``sum_i weights[i] * score(triples[i])``."""
    triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    view = batch_view(model, triples[:, 0], triples[:, 1], triples[:, 2], train=train, rng=rng)
    return view.grad(weights)


def regularization(model: EmbeddingModel, entity_occurrences, relation_occurrences,
                   entity_freq=None, relation_freq=None) -> tuple[float, SparseGrad]:
    """Weighted l_p penalty over embedding occurrences and its sparse gradient.

    ``lambda_e * sum_occ |e|_p^p (/ freq(e))`` plus the analogous relation term;
    occurrences may repeat. Frequencies are required when frequency weighting is on.
    """
    cfg = model.config
    p = REGULARIZERS[cfg.regularization]
    grad = SparseGrad.empty(model)
    if p == 0 or (cfg.reg_entity == 0 and cfg.reg_relation == 0):
        return 0.0, grad
    total = 0.0
    parts = {}
    for name, occ, lam, freq, table in (
        ("entity", entity_occurrences, cfg.reg_entity, entity_freq, model.entity),
        ("relation", relation_occurrences, cfg.reg_relation, relation_freq, model.relation),
    ):
        occ = np.asarray(occ, dtype=np.int64).ravel()
        rows, counts = np.unique(occ, return_counts=True)
        coef = lam * counts.astype(float)
        if cfg.frequency_weighting:
            if freq is None:
                raise ValueError("frequency weighting needs training frequencies")
            coef = coef / np.maximum(np.asarray(freq, dtype=float)[rows], 1.0)
        x = table[rows]
        ax = np.abs(x)
        total += float(coef @ (ax ** p).sum(axis=1))
        if p == 1:
            g = np.sign(x)
        else:
            g = p * ax ** (p - 1) * np.sign(x)
        parts[name] = (rows, g * coef[:, None])
    grad = SparseGrad(parts["entity"][0], parts["entity"][1], parts["relation"][0], parts["relation"][1])
    return total, grad


# -- checkpoints --------------------------------------------------------------

MAGIC = b"CFKGRCKP"
VERSION = 1
_HEADER = struct.Struct("<8sIIQQQQB")


def save_checkpoint(model: EmbeddingModel, path: str | Path) -> None:
    cfg = model.config
    blob = json.dumps({"config": asdict(cfg), "seed": model.seed, "meta": model.meta},
                      sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, KINDS.index(cfg.kind), cfg.entity_dim, cfg.d_r,
                              model.n_entities, model.n_relations, int(cfg.reciprocal)))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for arr in model.parameters().values():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> EmbeddingModel:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _HEADER.size + 4:
        raise ValueError(f"{path}: truncated checkpoint")
    magic, version, kind, d_e, d_r, n_e, n_r, recip = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    off = _HEADER.size
    (n_blob,) = struct.unpack_from("<I", data, off)
    off += 4
    blob = json.loads(data[off:off + n_blob].decode("utf-8"))
    off += n_blob
    cfg = ModelConfig.from_dict(blob["config"])
    if (cfg.kind, cfg.entity_dim, cfg.d_r, bool(recip)) != (KINDS[kind], d_e, d_r, cfg.reciprocal):
        raise ValueError(f"{path}: header disagrees with config blob")
    rows = 2 * n_r if cfg.reciprocal else n_r
    shapes = [(n_e, cfg.entity_width), (rows, cfg.relation_width)]
    if cfg.kind == "TuckER":
        shapes.append((d_e, d_r, d_e))
    arrays = []
    for shape in shapes:
        n = int(np.prod(shape))
        arrays.append(np.frombuffer(data, dtype="<f8", count=n, offset=off).astype(np.float64).reshape(shape))
        off += 8 * n
    if off != len(data):
        raise ValueError(f"{path}: trailing bytes after parameter arrays")
    core = arrays[2] if len(arrays) == 3 else None
    return EmbeddingModel(cfg, n_e, n_r, arrays[0], arrays[1], core, blob.get("seed", 0), blob.get("meta", {}))
