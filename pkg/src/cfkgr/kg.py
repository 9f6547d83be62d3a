"""Knowledge graph loading, indexing and queries.

Files follow the CoDEx layout: tab-separated ``head relation tail`` lines
per split, optional negative files with the same format, and an optional
``entity<TAB>type`` file. Ids are assigned by first appearance in train,
then valid, then test, then the negative files.
"""
from __future__ import annotations

import json
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np

log = logging.getLogger(__name__)

SPLITS = ("train", "valid", "test")


class Triple(NamedTuple):
    head: int
    relation: int
    tail: int


class KGFormatError(ValueError):
    """Raised for unreadable or inconsistent KG files."""


@dataclass(frozen=True)
class NeighborhoodQuery:
    center: Triple
    excluded: frozenset = frozenset()


def _read_rows(path: Path, ncols: int) -> list[tuple[str, ...]]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != ncols or any(not p for p in parts):
                raise KGFormatError(
                    f"{path}:{lineno}: expected {ncols} tab-separated columns, got {len(parts)}")
            rows.append(tuple(parts))
    return rows


def _as_array(triples: Iterable) -> np.ndarray:
    arr = np.asarray(list(triples), dtype=np.int64)
    return arr.reshape(-1, 3)


@dataclass(eq=False)
class KnowledgeGraph:
    """Immutable-by-convention fact store with the indexes the generator needs."""

    entities: list[str]
    relations: list[str]
    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray
    valid_negatives: np.ndarray | None = None
    test_negatives: np.ndarray | None = None
    entity_types: dict[int, frozenset[str]] | None = None
    report: dict = field(default_factory=dict)

    def __post_init__(self):
        self.entity_index = {e: i for i, e in enumerate(self.entities)}
        self.relation_index = {r: i for i, r in enumerate(self.relations)}
        for name in SPLITS:
            arr = getattr(self, name)
            if len(arr) and (arr[:, [0, 2]].max() >= self.n_entities or arr[:, 1].max() >= self.n_relations):
                raise KGFormatError(f"{name} split references ids outside the vocabulary")
        self.train_set = frozenset(map(Triple._make, self.train.tolist()))
        valid_set = frozenset(map(Triple._make, self.valid.tolist()))
        test_set = frozenset(map(Triple._make, self.test.tolist()))
        if (len(self.train_set) + len(valid_set) + len(test_set)
                != len(self.train_set | valid_set | test_set)):
            raise KGFormatError("splits not disjoint")
        self.valid_set, self.test_set = valid_set, test_set
        self.fact_set = self.train_set | valid_set | test_set
        self.facts = np.concatenate([self.train, self.valid, self.test]).reshape(-1, 3)
        for name in ("valid_negatives", "test_negatives"):
            neg = getattr(self, name)
            if neg is not None and any(Triple(*t) in self.fact_set for t in neg.tolist()):
                raise KGFormatError(f"{name} intersect the fact set")
        self._build_indexes()

    def _build_indexes(self):
        heads = defaultdict(set)
        tails = defaultdict(set)
        out_full = defaultdict(list)
        in_full = defaultdict(list)
        incident = defaultdict(list)
        for i, (h, r, t) in enumerate(self.facts.tolist()):
            heads[r].add(h)
            tails[r].add(t)
            out_full[(h, r)].append(t)
            in_full[(r, t)].append(h)
            incident[h].append(i)
            if t != h:
                incident[t].append(i)
        self._heads = {r: frozenset(s) for r, s in heads.items()}
        self._tails = {r: frozenset(s) for r, s in tails.items()}
        self._out = dict(out_full)
        self._in = dict(in_full)
        self._incident = {e: np.asarray(v, dtype=np.int64) for e, v in incident.items()}
        by_rel = defaultdict(list)
        for i, r in enumerate(self.train[:, 1].tolist()):
            by_rel[r].append(i)
        self._train_by_relation = {r: self.train[np.asarray(v)] for r, v in by_rel.items()}

    # -- sizes ---------------------------------------------------------------
    @property
    def n_entities(self) -> int:
        return len(self.entities)

    @property
    def n_relations(self) -> int:
        return len(self.relations)

    def counts(self) -> dict:
        return {
            "entities": self.n_entities,
            "relations": self.n_relations,
            **{name: int(len(getattr(self, name))) for name in SPLITS},
            "valid_negatives": None if self.valid_negatives is None else int(len(self.valid_negatives)),
            "test_negatives": None if self.test_negatives is None else int(len(self.test_negatives)),
        }

    # -- queries -------------------------------------------------------------
    def contains(self, triple, scope: str = "full") -> bool:
        triple = Triple(*triple)
        if scope == "train":
            return triple in self.train_set
        if scope == "full":
            return triple in self.fact_set
        raise ValueError(f"unknown scope {scope!r}")

    def _check_relation(self, relation: int):
        if not 0 <= relation < self.n_relations:
            raise KeyError(f"unknown relation id {relation}")

    def heads_of(self, relation: int) -> frozenset:
        self._check_relation(relation)
        return self._heads.get(relation, frozenset())

    def tails_of(self, relation: int) -> frozenset:
        self._check_relation(relation)
        return self._tails.get(relation, frozenset())

    def tails_from(self, head: int, relation: int) -> list[int]:
        """Tails ``t`` with ``(head, relation, t)`` in the full fact set."""
        return self._out.get((head, relation), [])

    def heads_into(self, relation: int, tail: int) -> list[int]:
        return self._in.get((relation, tail), [])

    def train_edges(self, relation: int) -> np.ndarray:
        return self._train_by_relation.get(relation, np.empty((0, 3), dtype=np.int64))

    def incident_indices(self, entities: Iterable[int]) -> np.ndarray:
        """Row indices into :attr:`facts` of facts touching any of ``entities``."""
        parts = [self._incident[e] for e in set(entities) if e in self._incident]
        if not parts:
            return np.empty(0, dtype=np.int64)
        return np.unique(np.concatenate(parts))

    def one_hop(self, query: NeighborhoodQuery) -> set[Triple]:
        """Facts sharing an entity with either endpoint of the center, minus exclusions."""
        c = Triple(*query.center)
        idx = self.incident_indices((c.head, c.tail))
        found = set(map(Triple._make, self.facts[idx].tolist()))
        found.discard(c)
        return found - set(query.excluded)

    def types_of(self, entity: int) -> frozenset:
        if self.entity_types is None:
            raise KGFormatError("entity types were not loaded; supply a type file")
        return self.entity_types.get(entity, frozenset())

    # -- labels --------------------------------------------------------------
    def label(self, triple) -> tuple[str, str, str]:
        h, r, t = triple
        return self.entities[h], self.relations[r], self.entities[t]

    def encode(self, head: str, relation: str, tail: str) -> Triple:
        try:
            return Triple(self.entity_index[head], self.relation_index[relation], self.entity_index[tail])
        except KeyError as exc:
            raise KeyError(f"unknown symbol {exc.args[0]!r}") from None

    def relation_id(self, label: str) -> int:
        try:
            return self.relation_index[label]
        except KeyError:
            raise KeyError(f"unknown relation {label!r}") from None


def load_kg(triple_paths: dict, negative_paths: dict | None = None,
            type_path: str | Path | None = None) -> KnowledgeGraph:
    """Load a KG from TSV files.

    ``triple_paths`` maps split name (train/valid/test) to a path; missing
    valid/test splits are treated as empty. ``negative_paths`` may map
    ``valid``/``test`` to negative triple files.
    """
    if "train" not in triple_paths:
        raise KGFormatError("a train split is required")
    entity_index: dict[str, int] = {}
    relation_index: dict[str, int] = {}
    train_relations: set[str] = set()
    unknown_relations: dict[str, list[str]] = {}

    def encode_rows(rows, split):
        out = []
        for h, r, t in rows:
            for e in (h, t):
                if e not in entity_index:
                    entity_index[e] = len(entity_index)
            if r not in relation_index:
                relation_index[r] = len(relation_index)
            if split == "train":
                train_relations.add(r)
            elif r not in train_relations:
                unknown_relations.setdefault(split, [])
                if r not in unknown_relations[split]:
                    unknown_relations[split].append(r)
            out.append((entity_index[h], relation_index[r], entity_index[t]))
        return _as_array(out)

    arrays = {}
    warnings: list[str] = []
    for split in SPLITS:
        path = triple_paths.get(split)
        if path is None:
            arrays[split] = np.empty((0, 3), dtype=np.int64)
            continue
        rows = _read_rows(Path(path), 3)
        if not rows:
            raise KGFormatError(f"{path}: no facts")
        if len(set(rows)) != len(rows):
            warnings.append(f"{path}: {len(rows) - len(set(rows))} duplicate lines dropped")
            rows = list(dict.fromkeys(rows))
        arrays[split] = encode_rows(rows, split)

    negatives = {}
    for split, path in (negative_paths or {}).items():
        if path is None:
            continue
        rows = list(dict.fromkeys(_read_rows(Path(path), 3)))
        negatives[split] = encode_rows(rows, f"{split}_negatives")

    warnings += [f"relation {r!r} appears in {split} but not in train"
                 for split, rels in unknown_relations.items() for r in rels]
    types = None
    if type_path is not None:
        types_acc: dict[int, set] = defaultdict(set)
        skipped = 0
        for ent, typ in _read_rows(Path(type_path), 2):
            if ent in entity_index:
                types_acc[entity_index[ent]].add(typ)
            else:
                skipped += 1
        if skipped:
            warnings.append(f"{skipped} type rows reference entities without facts")
        types = {e: frozenset(s) for e, s in types_acc.items()}

    by_id = lambda index: [k for k, _ in sorted(index.items(), key=lambda kv: kv[1])]
    kg = KnowledgeGraph(
        entities=by_id(entity_index), relations=by_id(relation_index),
        train=arrays["train"], valid=arrays["valid"], test=arrays["test"],
        valid_negatives=negatives.get("valid"), test_negatives=negatives.get("test"),
        entity_types=types,
    )
    kg.report = {"counts": kg.counts(), "warnings": warnings}
    for w in warnings:
        log.warning(w)
    log.info("loaded KG: %s", kg.report["counts"])
    return kg


_SPLIT_NAMES = {
    "train": ("train.txt", "train.tsv"),
    "valid": ("valid.txt", "valid.tsv"),
    "test": ("test.txt", "test.tsv"),
}
_NEG_NAMES = {
    "valid": ("valid_negatives.txt", "valid_negatives.tsv"),
    "test": ("test_negatives.txt", "test_negatives.tsv"),
}
_TYPE_NAMES = ("entity_types.tsv", "entity_types.txt")


def _first_existing(directory: Path, names) -> Path | None:
    for name in names:
        if (directory / name).is_file():
            return directory / name
    return None


def load_kg_dir(directory: str | Path) -> KnowledgeGraph:
    """Load ``train/valid/test[.txt|.tsv]`` plus optional negatives and types from a directory."""
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"KG directory not found: {directory}")
    triple_paths = {s: _first_existing(directory, n) for s, n in _SPLIT_NAMES.items()}
    if triple_paths["train"] is None:
        raise FileNotFoundError(f"no train.txt in {directory}")
    triple_paths = {s: p for s, p in triple_paths.items() if p is not None}
    negative_paths = {s: _first_existing(directory, n) for s, n in _NEG_NAMES.items()}
    return load_kg(triple_paths, negative_paths, _first_existing(directory, _TYPE_NAMES))


def write_triples(path: str | Path, kg_or_labels, triples) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for t in triples:
            fh.write("\t".join(kg_or_labels.label(t)) + "\n")


def save_kg_dir(kg: KnowledgeGraph, directory: str | Path) -> None:
    """Inverse of :func:`load_kg_dir`; reloading yields identical ids."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for split in SPLITS:
        arr = getattr(kg, split)
        if len(arr):
            write_triples(directory / f"{split}.txt", kg, arr.tolist())
    for split in ("valid", "test"):
        neg = getattr(kg, f"{split}_negatives")
        if neg is not None and len(neg):
            write_triples(directory / f"{split}_negatives.txt", kg, neg.tolist())
    if kg.entity_types is not None:
        with open(directory / "entity_types.tsv", "w", encoding="utf-8") as fh:
            for e in sorted(kg.entity_types):
                for typ in sorted(kg.entity_types[e]):
                    fh.write(f"{kg.entities[e]}\t{typ}\n")


def write_load_report(kg: KnowledgeGraph, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(kg.report, fh, indent=2)
