"""Counterfactual benchmark generation from composition rules.

A rule ``(r1, r2, r3)`` reads ``(X, r1, Y) & (Y, r2, Z) -> (X, r3, Z)``. For each
rule and body atom we pick training edges ``e1 = (x, r1, y)`` and
``e2 = (y', r2, z)`` and turn them into a hypothetical triple that fires the
rule: ``(x, r1, y')`` for atom 1 or ``(y, r2, z)`` for atom 2. The rule
conclusion ``(x, r3, z)`` becomes the expected inference. Each scenario gets
two near and one far retained fact plus head/relation/tail corruptions of
all four facts: 16 labelled test cases.
"""
from __future__ import annotations

import json
import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .kg import KGFormatError, KnowledgeGraph, NeighborhoodQuery, Triple
from .seeding import substream

log = logging.getLogger(__name__)

FACT_KINDS = ("inference", "near", "far")
CORRUPTION_KINDS = {"head": "head_corruption", "relation": "relation_corruption", "tail": "tail_corruption"}
SLOTS = ("head", "relation", "tail")
CASES_PER_INSTANCE = 16


@dataclass(frozen=True)
class CompositionRule:
    rule_id: str
    r1: int
    r2: int
    r3: int
    support: int = 0
    pca_confidence: float = 0.0


@dataclass(frozen=True)
class TestCase:
    triple: Triple
    kind: str
    source_kind: str
    expected_label: int
    original_label: int
    fallback: bool = False


@dataclass
class CfkgrInstance:
    rule_id: str
    atom: int
    cf: Triple
    context_e1: Triple
    context_e2: Triple
    inference: Triple
    cases: list[TestCase]
    instance_id: str = ""


@dataclass(frozen=True)
class GenConfig:
    per_atom: int = 25
    seed: int = 0
    max_attempts: int = 500
    typed_relations: frozenset = frozenset({"P361", "P463"})

    def __post_init__(self):
        if self.per_atom < 1:
            raise ValueError("per_atom must be >= 1")
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")


class CorruptionError(RuntimeError):
    """No admissible corruption exists, even over the full entity/relation set."""


class SplitError(RuntimeError):
    pass


# -- rules -------------------------------------------------------------------

def load_rules(path: str | Path, kg: KnowledgeGraph) -> list[CompositionRule]:
    """Read ``rule_id r1 r2 r3 support pca_confidence`` TSV rows (relation labels)."""
    rules = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 6:
                raise KGFormatError(f"{path}:{lineno}: expected 6 tab-separated columns")
            rid, a, b, c, support, pca = parts
            try:
                rules.append(CompositionRule(rid, kg.relation_id(a), kg.relation_id(b), kg.relation_id(c),
                                             int(support), float(pca)))
            except (KeyError, ValueError) as exc:
                raise KGFormatError(f"{path}:{lineno}: {exc}") from None
    if len({r.rule_id for r in rules}) != len(rules):
        raise KGFormatError(f"{path}: duplicate rule ids")
    return rules


def write_rules(path: str | Path, rules: Iterable[CompositionRule], kg: KnowledgeGraph) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in rules:
            fh.write(f"{r.rule_id}\t{kg.relations[r.r1]}\t{kg.relations[r.r2]}\t{kg.relations[r.r3]}"
                     f"\t{r.support}\t{r.pca_confidence}\n")


def rule_inferences(kg: KnowledgeGraph, rules: Iterable[CompositionRule], cf) -> set[Triple]:
    """Conclusions of one forward step over ``F ∪ {cf}`` whose derivation uses ``cf``."""
    cf = Triple(*cf)
    out: set[Triple] = set()
    for rule in rules:
        if cf.relation == rule.r1:
            # cf = (X, r1, Y); continue with (Y, r2, Z)
            zs = list(kg.tails_from(cf.tail, rule.r2))
            if cf.relation == rule.r2 and cf.head == cf.tail:
                zs.append(cf.tail)
            out.update(Triple(cf.head, rule.r3, z) for z in zs)
        if cf.relation == rule.r2:
            # cf = (Y, r2, Z); continue from (X, r1, Y)
            xs = list(kg.heads_into(rule.r1, cf.head))
            if cf.relation == rule.r1 and cf.tail == cf.head:
                xs.append(cf.head)
            out.update(Triple(x, rule.r3, cf.tail) for x in xs)
    return out


# -- corruptions -------------------------------------------------------------------

class Forbidden:
    """Membership in ``F`` or in an extra set, without copying ``F``."""

    def __init__(self, kg: KnowledgeGraph, extra: Iterable = ()):
        self.facts = kg.fact_set
        self.extra = set(map(Triple._make, extra))

    def __contains__(self, triple) -> bool:
        return triple in self.facts or triple in self.extra


def _replace(fact: Triple, slot: str, value: int) -> Triple:
    if slot == "head":
        return Triple(value, fact.relation, fact.tail)
    if slot == "tail":
        return Triple(fact.head, fact.relation, value)
    return Triple(fact.head, value, fact.tail)


def _draw(pool, fact: Triple, slot: str, forbidden, rng, tries: int = 32):
    """Uniform admissible draw from ``pool`` (sorted ids) or None if there is none."""
    original = fact[("head", "relation", "tail").index(slot)]
    n = len(pool)
    if n == 0:
        return None
    for _ in range(tries):
        v = int(pool[rng.integers(n)])
        if v != original and _replace(fact, slot, v) not in forbidden:
            return v
    ok = [v for v in pool if v != original and _replace(fact, slot, int(v)) not in forbidden]
    if not ok:
        return None
    return int(ok[rng.integers(len(ok))])


def corrupt_case(fact, slot: str, kg: KnowledgeGraph, forbidden, rng: np.random.Generator,
                 pools: "_Pools | None" = None) -> tuple[Triple, bool]:
    """Corrupt one slot of ``fact``; returns ``(triple, used_full_entity_fallback)``.

    Head (tail) replacements come from entities seen as heads (tails) of the
    relation; if none of those is admissible the full entity set is used.
    Relation replacements are unconstrained. Results never lie in ``forbidden``.
    """
    fact = Triple(*fact)
    pools = pools or _Pools(kg)
    if slot == "relation":
        value = _draw(pools.relations, fact, slot, forbidden, rng)
        if value is None:
            raise CorruptionError(f"no relation corruption for {fact}")
        return _replace(fact, slot, value), False
    if slot not in ("head", "tail"):
        raise ValueError(f"unknown slot {slot!r}")
    constrained = pools.heads(fact.relation) if slot == "head" else pools.tails(fact.relation)
    value = _draw(constrained, fact, slot, forbidden, rng)
    if value is not None:
        return _replace(fact, slot, value), False
    value = _draw(pools.entities, fact, slot, forbidden, rng)
    if value is None:
        raise CorruptionError(f"no {slot} corruption for {fact}")
    return _replace(fact, slot, value), True


class _Pools:
    """Sorted id arrays for constrained corruption pools, cached per relation."""

    def __init__(self, kg: KnowledgeGraph):
        self.kg = kg
        self.entities = np.arange(kg.n_entities)
        self.relations = np.arange(kg.n_relations)
        self._heads: dict[int, np.ndarray] = {}
        self._tails: dict[int, np.ndarray] = {}

    def heads(self, r: int) -> np.ndarray:
        if r not in self._heads:
            self._heads[r] = np.array(sorted(self.kg.heads_of(r)), dtype=np.int64)
        return self._heads[r]

    def tails(self, r: int) -> np.ndarray:
        if r not in self._tails:
            self._tails[r] = np.array(sorted(self.kg.tails_of(r)), dtype=np.int64)
        return self._tails[r]


# -- retained facts -------------------------------------------------------------------

def sample_retained(kg: KnowledgeGraph, cf, context_pair, rng: np.random.Generator):
    """Two near facts from the neighbourhood of ``cf`` and one far fact outside it.

    Returns ``None`` when the neighbourhood (minus the context edges) has fewer
    than two facts or every fact touches ``cf``.
    """
    cf = Triple(*cf)
    near_pool = sorted(kg.one_hop(NeighborhoodQuery(cf, frozenset(map(Triple._make, context_pair)))))
    if len(near_pool) < 2:
        return None
    i, j = rng.choice(len(near_pool), size=2, replace=False)
    n_facts = len(kg.facts)
    ends = (cf.head, cf.tail)
    far = None
    for _ in range(64):
        row = kg.facts[rng.integers(n_facts)]
        if row[0] not in ends and row[2] not in ends:
            far = Triple(*map(int, row))
            break
    if far is None:
        incident = np.zeros(n_facts, dtype=bool)
        incident[kg.incident_indices(ends)] = True
        rows = np.flatnonzero(~incident)
        if not len(rows):
            return None
        far = Triple(*map(int, kg.facts[rows[rng.integers(len(rows))]]))
    return near_pool[int(i)], near_pool[int(j)], far


# -- generation ------------------------------------------------------------------------

def _typed_ids(kg: KnowledgeGraph, labels) -> set[int]:
    return {kg.relation_index[l] for l in labels if l in kg.relation_index}


def _candidate_edges(kg: KnowledgeGraph, rule: CompositionRule, atom: int):
    """Training edges for e1/e2 that satisfy the per-edge constraints I1-I3."""
    e1 = kg.train_edges(rule.r1)
    e2 = kg.train_edges(rule.r2)
    heads_r3 = kg.heads_of(rule.r3)
    tails_r3 = kg.tails_of(rule.r3)
    keep1 = [bool(x in heads_r3) for x in e1[:, 0].tolist()]
    keep2 = [bool(z in tails_r3) for z in e2[:, 2].tolist()]
    if atom == 1:
        tails_r1 = kg.tails_of(rule.r1)
        keep2 = [k and (yb in tails_r1) for k, yb in zip(keep2, e2[:, 0].tolist())]
    else:
        heads_r2 = kg.heads_of(rule.r2)
        keep1 = [k and (y in heads_r2) for k, y in zip(keep1, e1[:, 2].tolist())]
    return e1[np.asarray(keep1, dtype=bool)], e2[np.asarray(keep2, dtype=bool)]


def _build_cases(kg, rules, cf, inference, retained, rng, pools):
    near1, near2, far = retained
    forbidden = Forbidden(kg, rule_inferences(kg, rules, cf) | {cf})
    facts = [(inference, "inference", "inference", 0), (near1, "near", "near1", 1),
             (near2, "near", "near2", 1), (far, "far", "far", 1)]
    cases = [TestCase(f, kind, src, 1, orig) for f, kind, src, orig in facts]
    for f, _, src, _ in facts:
        for slot in SLOTS:
            triple, fb = corrupt_case(f, slot, kg, forbidden, rng, pools)
            cases.append(TestCase(triple, CORRUPTION_KINDS[slot], src, 0, 0, fb))
    return cases


def generate_for_rule(kg: KnowledgeGraph, rule: CompositionRule, atom: int, config: GenConfig,
                      rng: np.random.Generator, all_rules=None, diagnostics: dict | None = None,
                      pools: _Pools | None = None) -> list[CfkgrInstance]:
    """Up to ``config.per_atom`` scenarios for one rule and body atom.

    ``all_rules`` is the rule set whose inferences corruptions must avoid
    (defaults to this rule alone).
    """
    if atom not in (1, 2):
        raise ValueError("atom must be 1 or 2")
    all_rules = list(all_rules) if all_rules is not None else [rule]
    pools = pools or _Pools(kg)
    diag = {"rule_id": rule.rule_id, "atom": atom, "attempts": 0, "instances": 0,
            "fallbacks": 0, "exhausted": False, "rejected": Counter()}
    typed = _typed_ids(kg, config.typed_relations)
    atom_relation = rule.r1 if atom == 1 else rule.r2
    check_types = atom_relation in typed
    if check_types and kg.entity_types is None:
        raise KGFormatError(f"rule {rule.rule_id} uses typed relation {kg.relations[atom_relation]!r}"
                            " but no entity type file was loaded")
    e1s, e2s = _candidate_edges(kg, rule, atom)
    diag["e1_candidates"], diag["e2_candidates"] = int(len(e1s)), int(len(e2s))
    out: list[CfkgrInstance] = []
    seen: set[Triple] = set()
    if len(e1s) and len(e2s):
        for _ in range(config.per_atom):
            made = None
            for _ in range(config.max_attempts):
                diag["attempts"] += 1
                x, _, y = map(int, e1s[rng.integers(len(e1s))])
                yb, _, z = map(int, e2s[rng.integers(len(e2s))])
                e1, e2 = Triple(x, rule.r1, y), Triple(yb, rule.r2, z)
                cf = Triple(x, rule.r1, yb) if atom == 1 else Triple(y, rule.r2, z)
                inference = Triple(x, rule.r3, z)
                if cf in kg.fact_set or inference in kg.fact_set:
                    diag["rejected"]["in_kg"] += 1
                    continue
                if cf in seen:
                    diag["rejected"]["duplicate"] += 1
                    continue
                if check_types and not (kg.types_of(yb) & kg.types_of(y)):
                    diag["rejected"]["types"] += 1
                    continue
                retained = sample_retained(kg, cf, (e1, e2), rng)
                if retained is None:
                    diag["rejected"]["neighborhood"] += 1
                    continue
                try:
                    cases = _build_cases(kg, all_rules, cf, inference, retained, rng, pools)
                except CorruptionError:
                    diag["rejected"]["corruption"] += 1
                    continue
                made = CfkgrInstance(rule.rule_id, atom, cf, e1, e2, inference, cases)
                break
            if made is None:
                diag["exhausted"] = True
                break
            seen.add(made.cf)
            out.append(made)
            diag["fallbacks"] += sum(c.fallback for c in made.cases)
    diag["instances"] = len(out)
    diag["rejected"] = dict(sorted(diag["rejected"].items()))
    if not out:
        log.info("rule %s atom %d: no instances (%s)", rule.rule_id, atom, diag)
    if diagnostics is not None:
        diagnostics.setdefault("per_rule_atom", []).append(diag)
    return out


def canonical_order(instances: list[CfkgrInstance]) -> list[CfkgrInstance]:
    """Sort by (rule_id, atom, cf) and assign stable instance ids."""
    ordered = sorted(instances, key=lambda i: (i.rule_id, i.atom, tuple(i.cf)))
    counters: Counter = Counter()
    for inst in ordered:
        key = (inst.rule_id, inst.atom)
        inst.instance_id = f"{inst.rule_id}/a{inst.atom}/{counters[key]:03d}"
        counters[key] += 1
    return ordered


def generate_dataset(kg: KnowledgeGraph, rules: list[CompositionRule], config: GenConfig):
    """All instances for all rules and atoms in canonical order, plus diagnostics."""
    diagnostics: dict = {"seed": config.seed, "per_atom": config.per_atom}
    pools = _Pools(kg)
    instances = []
    for rule in rules:
        for atom in (1, 2):
            rng = substream(config.seed, "generate", rule.rule_id, atom)
            instances += generate_for_rule(kg, rule, atom, config, rng, rules, diagnostics, pools)
    diagnostics["total_instances"] = len(instances)
    return canonical_order(instances), diagnostics


# -- splitting ----------------------------------------------------------------------------

@dataclass
class Split:
    valid: list[CfkgrInstance]
    test: list[CfkgrInstance]
    valid_rules: list[str]
    test_rules: list[str]
    duplicate_pairs: int = 0
    warnings: list[str] = field(default_factory=list)


def split_valid_test(instances: list[CfkgrInstance], n_valid_rules: int = 5, seed: int = 0) -> Split:
    """Assign whole rules to validation, the rest to test, with no shared counterfactuals.

    Validation rules are drawn in a seeded order among rules whose
    counterfactuals appear under no other rule.
    """
    by_rule: dict[str, list[CfkgrInstance]] = defaultdict(list)
    for inst in instances:
        by_rule[inst.rule_id].append(inst)
    rule_ids = sorted(by_rule)
    if len(rule_ids) < n_valid_rules:
        raise SplitError(f"only {len(rule_ids)} rules produced instances; {n_valid_rules} needed for validation")
    cf_rules: dict[Triple, set] = defaultdict(set)
    for inst in instances:
        cf_rules[inst.cf].add(inst.rule_id)
    shared = {rid for owners in cf_rules.values() if len(owners) > 1 for rid in owners}
    order = [rule_ids[i] for i in substream(seed, "split").permutation(len(rule_ids))]
    valid_rules = [rid for rid in order if rid not in shared][:n_valid_rules]
    if len(valid_rules) < n_valid_rules:
        raise SplitError(f"only {len(valid_rules)} rules have counterfactuals disjoint from all other rules;"
                         f" cannot place {n_valid_rules} validation rules")
    valid_set = set(valid_rules)
    valid = [i for i in instances if i.rule_id in valid_set]
    test = [i for i in instances if i.rule_id not in valid_set]
    if {i.cf for i in valid} & {i.cf for i in test}:
        raise SplitError("counterfactual shared between validation and test")
    split = Split(valid, test, sorted(valid_rules), sorted(set(rule_ids) - valid_set))
    if not test:
        split.warnings.append("test split is empty")
    pairs = Counter((i.cf, i.inference) for i in test)
    split.duplicate_pairs = sum(n - 1 for n in pairs.values() if n > 1)
    if split.duplicate_pairs:
        split.warnings.append(f"{split.duplicate_pairs} duplicate (counterfactual, inference) pairs in test")
    for w in split.warnings:
        log.warning(w)
    return split


# -- factual inference filter -------------------------------------------------------------------

def filter_inferable(kg: KnowledgeGraph, rules: list[CompositionRule], min_test_cover: int = 5):
    """Test triples derivable from the train split by one rule step.

    Only rules deriving at least ``min_test_cover`` test triples count.
    Returns ``(sorted triples, {rule_id: cover})`` with the cover of every rule.
    """
    out_train: dict[tuple[int, int], list[int]] = defaultdict(list)
    for h, r, t in kg.train.tolist():
        out_train[(h, r)].append(t)
    cover: dict[str, set[Triple]] = {}
    for rule in rules:
        hits = set()
        for x, _, y in kg.train_edges(rule.r1).tolist():
            for z in out_train.get((y, rule.r2), ()):
                cand = Triple(x, rule.r3, z)
                if cand in kg.test_set:
                    hits.add(cand)
        cover[rule.rule_id] = hits
    kept = set()
    for rid, hits in cover.items():
        if len(hits) >= min_test_cover:
            kept |= hits
    return sorted(kept), {rid: len(h) for rid, h in cover.items()}


# -- serialisation -----------------------------------------------------------------------------

def instance_records(inst: CfkgrInstance, kg: KnowledgeGraph) -> list[dict]:
    base = {"instance_id": inst.instance_id, "rule_id": inst.rule_id, "atom": inst.atom}
    for prefix, t in (("cf", inst.cf), ("context1", inst.context_e1), ("context2", inst.context_e2)):
        h, r, tl = kg.label(t)
        base.update({f"{prefix}_head": h, f"{prefix}_rel": r, f"{prefix}_tail": tl})
    rows = []
    for case in inst.cases:
        h, r, t = kg.label(case.triple)
        rows.append({**base, "head": h, "rel": r, "tail": t, "kind": case.kind,
                     "source_kind": case.source_kind, "expected_label": case.expected_label,
                     "original_label": case.original_label, "fallback": case.fallback})
    return rows


def write_dataset(path: str | Path, instances: list[CfkgrInstance], kg: KnowledgeGraph) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for inst in instances:
            for rec in instance_records(inst, kg):
                fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def read_dataset(path: str | Path, kg: KnowledgeGraph) -> list[CfkgrInstance]:
    """Parse a JSONL dataset back into instances (cases keep file order)."""
    grouped: dict[str, list[dict]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise KGFormatError(f"{path}:{lineno}: {exc}") from None
            grouped.setdefault(rec["instance_id"], []).append(rec)
    instances = []
    for iid, recs in grouped.items():
        first = recs[0]
        enc = lambda p: kg.encode(first[f"{p}_head"], first[f"{p}_rel"], first[f"{p}_tail"])
        cases = []
        inference = None
        for rec in recs:
            triple = kg.encode(rec["head"], rec["rel"], rec["tail"])
            label = rec.get("label", rec["expected_label"])
            cases.append(TestCase(triple, rec["kind"], rec["source_kind"], int(label),
                                  int(rec["original_label"]), bool(rec.get("fallback", False))))
            if rec["kind"] == "inference":
                inference = triple
        instances.append(CfkgrInstance(first["rule_id"], int(first["atom"]), enc("cf"), enc("context1"),
                                       enc("context2"), inference, cases, iid))
    return instances
