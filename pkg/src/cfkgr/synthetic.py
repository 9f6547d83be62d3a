"""Synthetic knowledge graphs with a planted composition rule.

Entities live in regions; each region has a few hub entities. ``r1`` links an
entity to another entity of the same region, ``r2`` links an entity to a hub
of its region, and every instantiation ``(x, r1, y), (y, r2, z)`` of the rule
also yields ``(x, r3, z)``. A fraction of those inferences is held out for
validation and testing, together with a small slice of ``r1``/``r2`` facts (never a body edge of a
held-out inference) so those relations get tuned thresholds. Random edges
over separate noise relations pad the graph; they stay in train.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .benchgen import CompositionRule
from .kg import KnowledgeGraph, Triple


@dataclass(frozen=True)
class PlantedSpec:
    n_entities: int = 300
    n_regions: int = 10
    hubs_per_region: int = 2
    n_instantiations: int = 400
    train_fraction: float = 0.8
    n_noise_edges: int = 3000
    n_noise_relations: int = 6
    heldout_fact_fraction: float = 0.05
    seed: int = 0


@dataclass
class PlantedKG:
    kg: KnowledgeGraph
    rule: CompositionRule
    held_out: np.ndarray
    """Held-out rule inferences (valid ∪ test), shape (n, 3)."""
    region: np.ndarray
    """Region of every entity."""
    hubs: np.ndarray
    """Hub entity ids, shape (n_regions, hubs_per_region)."""


def planted_rule_kg(spec: PlantedSpec = PlantedSpec()) -> PlantedKG:
    rng = np.random.default_rng(spec.seed)
    n, k, m = spec.n_entities, spec.n_regions, spec.hubs_per_region
    if n <= k * m + k:
        raise ValueError("too few entities for the requested regions")
    max_inferences = (n - k * m) * m
    if spec.n_instantiations > max_inferences:
        raise ValueError(f"at most {max_inferences} distinct inferences fit this layout")
    perm = rng.permutation(n)
    hubs = perm[:k * m].reshape(k, m)
    members = np.array_split(perm[k * m:], k)
    region = np.empty(n, dtype=np.int64)
    for c in range(k):
        region[hubs[c]] = c
        region[members[c]] = c
    others = perm[k * m:]
    entities = [f"e{i:04d}" for i in range(n)]
    relations = ["r1", "r2", "r3"] + [f"noise{j}" for j in range(spec.n_noise_relations)]
    R1, R2, R3 = 0, 1, 2

    body: dict[Triple, list[Triple]] = {}
    inferences: dict[Triple, None] = {}
    while len(inferences) < spec.n_instantiations:
        x = int(rng.choice(others))
        c = region[x]
        y = int(rng.choice(members[c]))
        z = int(rng.choice(hubs[c]))
        inf = Triple(x, R3, z)
        if x == y or inf in inferences:
            continue
        body.setdefault(Triple(x, R1, y), []).append(inf)
        body.setdefault(Triple(y, R2, z), []).append(inf)
        inferences[inf] = None

    inf_list = list(inferences)
    order = rng.permutation(len(inf_list))
    n_train = int(round(spec.train_fraction * len(inf_list)))
    train_inf = [inf_list[i] for i in order[:n_train]]
    held = [inf_list[i] for i in order[n_train:]]
    half = len(held) // 2
    valid, test = held[:half], held[half:]

    taken = set(body) | set(inferences)
    noise: dict[Triple, None] = {}
    while len(noise) < spec.n_noise_edges:
        h, t = (int(v) for v in rng.integers(n, size=2))
        tr = Triple(h, 3 + int(rng.integers(spec.n_noise_relations)), t)
        if h != t and tr not in taken:
            noise[tr] = None

    # body edges feeding only train inferences may be held out
    held_set = set(held)
    spare_body = [e for e, used in body.items() if not held_set.intersection(used)]
    held_facts = []
    for rel in (R1, R2):
        pool = [e for e in spare_body if e.relation == rel]
        n_hold = int(round(spec.heldout_fact_fraction * len(pool)))
        held_facts += [pool[i] for i in sorted(rng.choice(len(pool), size=n_hold, replace=False))]
    held_fact_set = set(held_facts)
    order = rng.permutation(len(held_facts))
    valid = valid + [held_facts[i] for i in order[:len(order) // 2]]
    test = test + [held_facts[i] for i in order[len(order) // 2:]]

    train = [e for e in list(body) + train_inf + list(noise) if e not in held_fact_set]
    train = [train[i] for i in rng.permutation(len(train))]
    kg = KnowledgeGraph(entities=entities, relations=relations,
                        train=np.asarray(train, dtype=np.int64),
                        valid=np.asarray(valid, dtype=np.int64).reshape(-1, 3),
                        test=np.asarray(test, dtype=np.int64).reshape(-1, 3))
    kg.report = {"counts": kg.counts(), "warnings": []}
    rule = CompositionRule("planted", R1, R2, R3, support=len(train_inf), pca_confidence=1.0)
    return PlantedKG(kg, rule, np.asarray(held, dtype=np.int64), region, hubs)
