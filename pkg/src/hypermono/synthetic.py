"""Seeded synthetic hyper-relational graphs for desk-scale experiments."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .hkg import (
    DatasetBundle,
    Direction,
    HyperFact,
    HyperGraph,
    QualifierPair,
    Query,
    Vocab,
    answers,
    entity_vocab,
)


@dataclass(frozen=True)
class SyntheticSpec:
    """Shape of a generated graph.

    Each disambiguation group is a Latin square over ``group_size`` heads and
    tails sharing one relation: every head has ``group_size`` tails (and every
    tail ``group_size`` heads) and only the full qualifier set singles out one
    answer.
    """

    entities: int = 50
    relations: int = 5
    facts: int = 200
    disambiguation_groups: int = 0
    group_size: int = 3
    qualified_fraction: float = 0.5
    max_qualifiers: int = 3
    test_fraction: float = 0.0
    seed: int = 0


def disambiguation_spec(seed: int = 0, groups: int = 10) -> SyntheticSpec:
    """A bundle made only of Latin-square groups (3 tails per (h, r))."""
    return SyntheticSpec(entities=50, relations=5, facts=9 * groups,
                         disambiguation_groups=groups, group_size=3, seed=seed)


def gen_synthetic(spec: SyntheticSpec) -> DatasetBundle:
    if min(spec.entities, spec.relations, spec.facts) < 1:
        raise ValueError("entity, relation and fact counts must be >= 1")
    if spec.entities < 2:
        raise ValueError("need at least two entities")
    g = spec.group_size
    grouped = spec.disambiguation_groups * g * g
    if grouped > spec.facts:
        raise ValueError(f"{spec.disambiguation_groups} groups need {grouped} facts, spec allows {spec.facts}")
    if spec.facts > spec.entities * (spec.entities - 1) * spec.relations:
        raise ValueError("more facts requested than distinct (h, r, t) combinations")
    if spec.disambiguation_groups and spec.entities < 2 * g:
        raise ValueError("too few entities for the requested group size")

    rng = np.random.default_rng(spec.seed)
    entities, relations = entity_vocab(), Vocab()
    ent = [entities.intern(f"e{i}") for i in range(spec.entities)]
    rel = [relations.intern(f"r{j}") for j in range(spec.relations)]

    facts: list[HyperFact] = []
    triples: set[tuple[int, int, int]] = set()
    locked_hr: set[tuple[int, int]] = set()
    locked_rt: set[tuple[int, int]] = set()

    for _ in range(spec.disambiguation_groups):
        for _attempt in range(1000):
            r = rel[rng.integers(spec.relations)]
            picks = rng.choice(spec.entities, size=2 * g, replace=False)
            heads, tails = [ent[i] for i in picks[:g]], [ent[i] for i in picks[g:]]
            if any((h, r) in locked_hr for h in heads) or any((r, t) in locked_rt for t in tails):
                continue
            if any((h, r, t) in triples for h in heads for t in tails):
                continue
            break
        else:
            raise ValueError("could not place disambiguation group; spec infeasible")
        shared_attr = rel[rng.integers(spec.relations)]
        split_attr = rel[rng.integers(spec.relations)]
        shared_val = ent[rng.integers(spec.entities)]
        values = [ent[i] for i in rng.choice(spec.entities, size=g, replace=False)]
        if split_attr == shared_attr and shared_val in values:
            shared_val = next(e for e in ent if e not in values)
        for i, h in enumerate(heads):
            for j, t in enumerate(tails):
                quals = (QualifierPair(shared_attr, shared_val),
                         QualifierPair(split_attr, values[(i + j) % g]))
                facts.append(HyperFact(h, r, t, quals))
                triples.add((h, r, t))
        locked_hr.update((h, r) for h in heads)
        locked_rt.update((r, t) for t in tails)

    budget = 200 * spec.facts + 1000
    while len(facts) < spec.facts:
        budget -= 1
        if budget < 0:
            raise ValueError("could not place enough random facts; spec infeasible")
        h, t = (ent[i] for i in rng.choice(spec.entities, size=2, replace=False))
        r = rel[rng.integers(spec.relations)]
        if (h, r, t) in triples or (h, r) in locked_hr or (r, t) in locked_rt:
            continue
        quals: tuple[QualifierPair, ...] = ()
        if rng.random() < spec.qualified_fraction:
            n = int(rng.integers(1, spec.max_qualifiers + 1))
            quals = tuple(
                QualifierPair(rel[rng.integers(spec.relations)], ent[rng.integers(spec.entities)])
                for _ in range(n)
            )
        facts.append(HyperFact(h, r, t, quals))
        triples.add((h, r, t))

    order = rng.permutation(len(facts))
    facts = [facts[i] for i in order]
    n_test = int(round(spec.test_fraction * len(facts)))
    test, train = facts[:n_test], facts[n_test:]

    graph = HyperGraph(facts, entities, relations)
    truth = {}
    for f in facts:
        for d in (Direction.TAIL, Direction.HEAD):
            q = Query.from_fact(f, d)
            truth[q] = frozenset(answers(q, graph))
    meta = {"scenario": "synthetic", "percentage": None, "arity": None, "spec": asdict(spec)}
    return DatasetBundle(train, test, entities, relations, None, meta, truth)
