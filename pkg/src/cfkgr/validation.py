"""Post-hoc checks of generated scenarios against the raw fact arrays.

Deliberately avoids the graph's lookup indexes and the generator's helpers:
everything is recomputed by scanning ``kg.facts`` with numpy.
"""
from __future__ import annotations

import numpy as np

from .benchgen import CfkgrInstance, CompositionRule
from .kg import KnowledgeGraph

_EXPECTED = {"inference": (1, 0), "near": (1, 1), "far": (1, 1),
             "head_corruption": (0, 0), "relation_corruption": (0, 0), "tail_corruption": (0, 0)}


class _Facts:
    def __init__(self, kg: KnowledgeGraph):
        self.arr = kg.facts
        self.keys = {tuple(row) for row in self.arr.tolist()}
        self.train_keys = {tuple(row) for row in kg.train.tolist()}

    def has(self, t) -> bool:
        return tuple(map(int, t)) in self.keys

    def heads(self, r) -> np.ndarray:
        return self.arr[self.arr[:, 1] == r, 0]

    def tails(self, r) -> np.ndarray:
        return self.arr[self.arr[:, 1] == r, 2]

    def inferences(self, rules, cf) -> set:
        """Brute force: join every body pair over F ∪ {cf} and keep those using cf."""
        ext = np.vstack([self.arr, np.asarray(cf, dtype=np.int64)[None]])
        out = set()
        for rule in rules:
            a = ext[ext[:, 1] == rule.r1]
            b = ext[ext[:, 1] == rule.r2]
            ia, ib = np.nonzero(a[:, 2][:, None] == b[:, 0][None, :])
            for i, j in zip(ia.tolist(), ib.tolist()):
                if tuple(a[i]) == tuple(cf) or tuple(b[j]) == tuple(cf):
                    out.add((int(a[i, 0]), rule.r3, int(b[j, 2])))
        return out


def validate_instance(kg: KnowledgeGraph, rules: list[CompositionRule], inst: CfkgrInstance,
                      typed_relation_ids=frozenset(), facts: _Facts | None = None) -> list[str]:
    """All violated constraints of one scenario (empty when valid)."""
    f = facts or _Facts(kg)
    errs: list[str] = []
    rule = next((r for r in rules if r.rule_id == inst.rule_id), None)
    if rule is None:
        return [f"unknown rule {inst.rule_id}"]
    (x, r1, y), (yb, r2, z) = inst.context_e1, inst.context_e2
    cf = tuple(inst.cf)
    if (r1, r2) != (rule.r1, rule.r2):
        errs.append("context relations do not match the rule body")
    for e in (inst.context_e1, inst.context_e2):
        if tuple(e) not in f.train_keys:
            errs.append(f"context edge {tuple(e)} not in train")
    want_cf = (x, rule.r1, yb) if inst.atom == 1 else (y, rule.r2, z)
    if cf != want_cf:
        errs.append("counterfactual does not follow from the context edges")
    if tuple(inst.inference) != (x, rule.r3, z):
        errs.append("inference is not the rule conclusion")
    if f.has(cf):
        errs.append("counterfactual already in F")
    if f.has(inst.inference):
        errs.append("inference already in F")
    # I1: the new endpoint can fill the body slot it lands in
    if inst.atom == 1 and yb not in set(f.tails(rule.r1).tolist()):
        errs.append("I1: y' never a tail of r1")
    if inst.atom == 2 and y not in set(f.heads(rule.r2).tolist()):
        errs.append("I1: y never a head of r2")
    if x not in set(f.heads(rule.r3).tolist()):
        errs.append("I2: x never a head of r3")
    if z not in set(f.tails(rule.r3).tolist()):
        errs.append("I3: z never a tail of r3")
    atom_rel = rule.r1 if inst.atom == 1 else rule.r2
    if atom_rel in typed_relation_ids:
        if kg.entity_types is None or not (kg.entity_types.get(yb, frozenset()) & kg.entity_types.get(y, frozenset())):
            errs.append("I4: y and y' share no type")

    if len(inst.cases) != 16:
        errs.append(f"{len(inst.cases)} cases instead of 16")
    kinds = [c.kind for c in inst.cases]
    for kind, n in (("inference", 1), ("near", 2), ("far", 1), ("head_corruption", 4),
                    ("relation_corruption", 4), ("tail_corruption", 4)):
        if kinds.count(kind) != n:
            errs.append(f"expected {n} {kind} cases, found {kinds.count(kind)}")
    for c in inst.cases:
        if (c.expected_label, c.original_label) != _EXPECTED.get(c.kind, (-1, -1)):
            errs.append(f"bad labels on {c.kind} case")
    facts_by_src = {c.source_kind: tuple(c.triple) for c in inst.cases
                    if c.kind in ("inference", "near", "far")}
    ends = {cf[0], cf[2]}
    context = {tuple(inst.context_e1), tuple(inst.context_e2)}
    for src in ("near1", "near2"):
        t = facts_by_src.get(src)
        if t is None:
            continue
        if not f.has(t):
            errs.append(f"{src} not in F")
        if t in context or t == cf or not ({t[0], t[2]} & ends):
            errs.append(f"{src} outside the neighbourhood")
    if facts_by_src.get("near1") == facts_by_src.get("near2"):
        errs.append("near facts coincide")
    far = facts_by_src.get("far")
    if far is not None and (not f.has(far) or {far[0], far[2]} & ends):
        errs.append("far fact touches the counterfactual or is not in F")

    forbidden = f.inferences(rules, cf) | {cf}
    for c in inst.cases:
        if not c.kind.endswith("_corruption"):
            continue
        t = tuple(c.triple)
        src = facts_by_src.get(c.source_kind)
        if src is None:
            errs.append(f"corruption of unknown source {c.source_kind}")
            continue
        slot = {"head_corruption": 0, "relation_corruption": 1, "tail_corruption": 2}[c.kind]
        if t[slot] == src[slot] or any(t[i] != src[i] for i in range(3) if i != slot):
            errs.append(f"{c.kind} of {c.source_kind} changes the wrong slot")
        if f.has(t) or t in forbidden:
            errs.append(f"C3: {c.kind} of {c.source_kind} is a fact or an inference")
        # C1/C2: constrained unless the fallback flag says otherwise
        if slot == 0 and not c.fallback and t[0] not in set(f.heads(t[1]).tolist()):
            errs.append(f"C1: head corruption of {c.source_kind} outside heads of its relation")
        if slot == 2 and not c.fallback and t[2] not in set(f.tails(t[1]).tolist()):
            errs.append(f"C2: tail corruption of {c.source_kind} outside tails of its relation")
    return errs


def validate_dataset(kg: KnowledgeGraph, rules, instances, typed_relation_ids=frozenset()) -> dict[str, list[str]]:
    """Map instance id -> violations, for every instance with at least one."""
    f = _Facts(kg)
    out = {}
    for inst in instances:
        errs = validate_instance(kg, rules, inst, typed_relation_ids, f)
        if errs:
            out[inst.instance_id or str(inst.cf)] = errs
    return out
