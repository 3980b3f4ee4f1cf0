"""Hyper-relational fact storage, ingestion, subsets and the exact answer oracle."""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np

log = logging.getLogger(__name__)

MASK_TOKEN = "[MASK]"


class ParseError(ValueError):
    def __init__(self, message: str, lineno: int | None = None):
        self.lineno = lineno
        prefix = f"line {lineno}: " if lineno is not None else ""
        super().__init__(prefix + message)


class SubsetError(ValueError):
    pass


class Vocab:
    """Bidirectional label <-> dense index table."""

    def __init__(self, reserved: Iterable[str] = ()):
        self._index: dict[str, int] = {}
        self._labels: list[str] = []
        self.reserved = tuple(reserved)
        for label in self.reserved:
            self.intern(label)

    def intern(self, label: str) -> int:
        idx = self._index.get(label)
        if idx is None:
            idx = self._index[label] = len(self._labels)
            self._labels.append(label)
        return idx

    def index(self, label: str) -> int:
        return self._index[label]

    def label(self, idx: int) -> str:
        return self._labels[idx]

    def __contains__(self, label: str) -> bool:
        return label in self._index

    def __len__(self) -> int:
        return len(self._labels)

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(self._labels)

    @property
    def n_real(self) -> int:
        """Number of entries excluding reserved tokens."""
        return len(self._labels) - len(self.reserved)


def entity_vocab() -> Vocab:
    """Entity vocabulary; index 0 is the mask token."""
    return Vocab(reserved=(MASK_TOKEN,))


MASK_ID = 0


class QualifierPair(NamedTuple):
    attribute: int
    value: int


@dataclass(frozen=True)
class HyperFact:
    head: int
    relation: int
    tail: int
    qualifiers: tuple[QualifierPair, ...] = ()

    @property
    def triple(self) -> tuple[int, int, int]:
        return (self.head, self.relation, self.tail)

    @cached_property
    def qualifier_set(self) -> frozenset[QualifierPair]:
        return frozenset(self.qualifiers)

    @property
    def is_qualified(self) -> bool:
        return bool(self.qualifiers)


def parse_fact_line(line: str, entities: Vocab, relations: Vocab, lineno: int | None = None) -> HyperFact:
    """Parse ``h<TAB>r<TAB>t[<TAB>a<TAB>v]...`` and intern every label."""
    fields = line.rstrip("\r\n").split("\t")
    if len(fields) < 3 or len(fields) % 2 == 0:
        raise ParseError(f"expected an odd number (>= 3) of tab-separated fields, got {len(fields)}", lineno)
    if any(not f for f in fields):
        raise ParseError("empty field", lineno)
    h = entities.intern(fields[0])
    r = relations.intern(fields[1])
    t = entities.intern(fields[2])
    quals = tuple(
        QualifierPair(relations.intern(fields[i]), entities.intern(fields[i + 1]))
        for i in range(3, len(fields), 2)
    )
    return HyperFact(h, r, t, quals)


def format_fact(fact: HyperFact, entities: Vocab, relations: Vocab) -> str:
    parts = [entities.label(fact.head), relations.label(fact.relation), entities.label(fact.tail)]
    for a, v in fact.qualifiers:
        parts += [relations.label(a), entities.label(v)]
    return "\t".join(parts)


class Direction(str, enum.Enum):
    HEAD = "head"
    TAIL = "tail"


@dataclass(frozen=True)
class Query:
    """``(known, r, ?, Q)`` for tail prediction or ``(?, r, known, Q)`` for heads."""

    known: int
    relation: int
    direction: Direction
    qualifiers: tuple[QualifierPair, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "qualifiers", tuple(sorted(set(self.qualifiers))))

    @classmethod
    def from_fact(cls, fact: HyperFact, direction: Direction, qualifiers=None) -> "Query":
        known = fact.head if direction is Direction.TAIL else fact.tail
        quals = fact.qualifiers if qualifiers is None else qualifiers
        return cls(known, fact.relation, direction, tuple(quals))

    def gold(self, fact: HyperFact) -> int:
        return fact.tail if self.direction is Direction.TAIL else fact.head


class HyperGraph:
    """Immutable fact collection with head/tail adjacency indices."""

    def __init__(self, facts: Iterable[HyperFact], entities: Vocab, relations: Vocab):
        self.facts: tuple[HyperFact, ...] = tuple(facts)
        self.entities = entities
        self.relations = relations
        self._index = self._build_index(self.facts)

    @staticmethod
    def _build_index(facts):
        by_head: dict[int, list[int]] = {}
        by_tail: dict[int, list[int]] = {}
        by_head_rel: dict[tuple[int, int], list[int]] = {}
        by_rel_tail: dict[tuple[int, int], list[int]] = {}
        triples_head: dict[int, dict[tuple, None]] = {}
        triples_tail: dict[int, dict[tuple, None]] = {}
        for i, f in enumerate(facts):
            by_head.setdefault(f.head, []).append(i)
            by_tail.setdefault(f.tail, []).append(i)
            by_head_rel.setdefault((f.head, f.relation), []).append(i)
            by_rel_tail.setdefault((f.relation, f.tail), []).append(i)
            triples_head.setdefault(f.head, {})[f.triple] = None
            triples_tail.setdefault(f.tail, {})[f.triple] = None
        freeze = lambda d: {k: tuple(v) for k, v in d.items()}  # noqa: E731
        return {
            "by_head": freeze(by_head),
            "by_tail": freeze(by_tail),
            "by_head_rel": freeze(by_head_rel),
            "by_rel_tail": freeze(by_rel_tail),
            "triples_head": {k: tuple(v) for k, v in triples_head.items()},
            "triples_tail": {k: tuple(v) for k, v in triples_tail.items()},
        }

    def adjacency(self) -> dict:
        return self._index

    def rebuild_adjacency(self) -> dict:
        return self._build_index(self.facts)

    def __len__(self) -> int:
        return len(self.facts)

    def hyper_neighbors(self, entity: int, side: str = "head") -> tuple[HyperFact, ...]:
        idx = self._index["by_head" if side == "head" else "by_tail"].get(entity, ())
        return tuple(self.facts[i] for i in idx)

    def triple_neighbors(self, entity: int, side: str = "head") -> tuple[HyperFact, ...]:
        triples = self._index["triples_head" if side == "head" else "triples_tail"].get(entity, ())
        return tuple(HyperFact(*t) for t in triples)

    def candidates(self, query: Query) -> tuple[HyperFact, ...]:
        if query.direction is Direction.TAIL:
            idx = self._index["by_head_rel"].get((query.known, query.relation), ())
        else:
            idx = self._index["by_rel_tail"].get((query.relation, query.known), ())
        return tuple(self.facts[i] for i in idx)


def neighbors(
    graph: HyperGraph,
    entity: int,
    mode: str = "triple",
    k: int = 3,
    seed: int = 0,
    side: str = "head",
) -> list[HyperFact]:
    """Facts around ``entity``: distinct main triples (``triple``) or full facts (``hyper``).

    ``side="head"`` returns facts headed by the entity; ``side="tail"`` the
    mirror set used for head prediction.  More than ``k`` candidates are
    subsampled uniformly with a generator keyed by ``(seed, entity)``.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if mode == "triple":
        found = graph.triple_neighbors(entity, side)
    elif mode == "hyper":
        found = graph.hyper_neighbors(entity, side)
    else:
        raise ValueError(f"unknown neighbor mode {mode!r}")
    if len(found) <= k:
        return list(found)
    mode_code = 0 if mode == "triple" else 1
    side_code = 0 if side == "head" else 1
    rng = np.random.default_rng([seed, entity, mode_code, side_code])
    pick = np.sort(rng.choice(len(found), size=k, replace=False))
    return [found[i] for i in pick]


def answers(query: Query, graph: HyperGraph) -> set[int]:
    """Exact answer set: facts matching the fixed slots whose qualifiers contain Q."""
    wanted = frozenset(query.qualifiers)
    out = set()
    for f in graph.candidates(query):
        if wanted <= f.qualifier_set:
            out.add(f.tail if query.direction is Direction.TAIL else f.head)
    return out


@dataclass
class MonotonicityReport:
    samples: int
    violations: list[tuple[Query, Query]]
    mean_answers_small: float
    mean_answers_large: float

    @property
    def ok(self) -> bool:
        return not self.violations


def check_monotonicity(graph: HyperGraph, samples: int, seed: int = 0) -> MonotonicityReport:
    """Sample nested query pairs (Q1 subset of Q2) and check Ans(q2) is within Ans(q1)."""
    if samples < 1:
        raise ValueError("samples must be >= 1")
    if not graph.facts:
        return MonotonicityReport(samples, [], 0.0, 0.0)
    rng = np.random.default_rng(seed)
    pool = sorted({q for f in graph.facts for q in f.qualifiers})
    violations = []
    n1 = n2 = 0
    for _ in range(samples):
        fact = graph.facts[rng.integers(len(graph.facts))]
        direction = Direction.TAIL if rng.random() < 0.5 else Direction.HEAD
        quals = sorted(fact.qualifier_set)
        if pool and rng.random() < 0.25:
            quals.append(pool[rng.integers(len(pool))])
        keep2 = rng.random(len(quals)) < 0.7
        q2_pairs = [q for q, keep in zip(quals, keep2) if keep]
        keep1 = rng.random(len(q2_pairs)) < 0.5
        q1_pairs = [q for q, keep in zip(q2_pairs, keep1) if keep]
        q1 = Query.from_fact(fact, direction, q1_pairs)
        q2 = Query.from_fact(fact, direction, q2_pairs)
        a1, a2 = answers(q1, graph), answers(q2, graph)
        n1 += len(a1)
        n2 += len(a2)
        if not a2 <= a1:
            violations.append((q1, q2))
    return MonotonicityReport(samples, violations, n1 / samples, n2 / samples)


# ---------------------------------------------------------------- bundles


@dataclass
class DatasetBundle:
    train: list[HyperFact]
    test: list[HyperFact]
    entities: Vocab
    relations: Vocab
    valid: list[HyperFact] | None = None
    metadata: dict = field(default_factory=dict)
    ground_truth: dict[Query, frozenset[int]] = field(default_factory=dict)

    def split(self, name: str) -> list[HyperFact]:
        if name == "train":
            return self.train
        if name == "test":
            return self.test
        if name == "valid":
            if self.valid is None:
                raise KeyError("bundle has no validation split")
            return self.valid
        raise KeyError(f"unknown split {name!r}")

    @property
    def splits(self) -> dict[str, list[HyperFact]]:
        out = {"train": self.train}
        if self.valid is not None:
            out["valid"] = self.valid
        out["test"] = self.test
        return out

    @cached_property
    def graph(self) -> HyperGraph:
        """Filter graph over the union of all splits."""
        facts = [f for split in self.splits.values() for f in split]
        return HyperGraph(facts, self.entities, self.relations)

    @cached_property
    def train_graph(self) -> HyperGraph:
        return HyperGraph(self.train, self.entities, self.relations)

    @property
    def n_entities(self) -> int:
        return len(self.entities)

    @property
    def n_relations(self) -> int:
        return len(self.relations)

    def model_selection_split(self, seed: int = 0, fraction: float = 0.1) -> list[HyperFact]:
        """Validation facts, or a seeded slice of train when no valid split exists."""
        if self.valid:
            return self.valid
        rng = np.random.default_rng(seed)
        n = max(1, int(round(fraction * len(self.train))))
        pick = np.sort(rng.choice(len(self.train), size=min(n, len(self.train)), replace=False))
        return [self.train[i] for i in pick]


def read_facts(path, entities: Vocab, relations: Vocab) -> list[HyperFact]:
    facts = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            facts.append(parse_fact_line(line, entities, relations, lineno))
    return facts


def write_facts(path, facts: Iterable[HyperFact], entities: Vocab, relations: Vocab) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for f in facts:
            fh.write(format_fact(f, entities, relations) + "\n")


def load_dataset(directory, name: str | None = None, percentage: float | None = None,
                 arity: int | None = None) -> DatasetBundle:
    """Load ``train.txt``, optional ``valid.txt`` and ``test.txt`` from a directory."""
    directory = Path(directory)
    train_path, valid_path, test_path = (directory / f"{s}.txt" for s in ("train", "valid", "test"))
    for p in (train_path, test_path):
        if not p.is_file():
            raise FileNotFoundError(f"missing fact file {p}")
    entities, relations = entity_vocab(), Vocab()
    train = read_facts(train_path, entities, relations)
    valid = read_facts(valid_path, entities, relations) if valid_path.is_file() else None
    test = read_facts(test_path, entities, relations)
    meta = {"scenario": name or directory.name, "percentage": percentage, "arity": arity}
    return DatasetBundle(train, test, entities, relations, valid, meta)


def save_dataset(bundle: DatasetBundle, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for split, facts in bundle.splits.items():
        write_facts(directory / f"{split}.txt", facts, bundle.entities, bundle.relations)
    return directory


def reindex(bundle: DatasetBundle, splits: dict[str, list[HyperFact] | None], metadata: dict) -> DatasetBundle:
    """Rebuild vocabularies over the given facts (labels preserved)."""
    ents, rels = entity_vocab(), Vocab()
    old_e, old_r = bundle.entities, bundle.relations

    def move(f: HyperFact) -> HyperFact:
        return HyperFact(
            ents.intern(old_e.label(f.head)),
            rels.intern(old_r.label(f.relation)),
            ents.intern(old_e.label(f.tail)),
            tuple(QualifierPair(rels.intern(old_r.label(a)), ents.intern(old_e.label(v)))
                  for a, v in f.qualifiers),
        )

    moved = {k: (None if v is None else [move(f) for f in v]) for k, v in splits.items()}
    return DatasetBundle(moved["train"], moved["test"], ents, rels, moved.get("valid"), metadata)


@dataclass(frozen=True)
class SubsetMode:
    kind: str  # "fixed-qualifier" | "fixed-percentage"
    value: float

    @classmethod
    def parse(cls, text: str) -> "SubsetMode":
        kind, _, raw = text.partition(":")
        if kind not in ("fixed-qualifier", "fixed-percentage") or not raw:
            raise ValueError(f"bad subset mode {text!r}; use fixed-qualifier:N or fixed-percentage:P")
        try:
            value = float(raw)
        except ValueError:
            raise ValueError(f"bad subset mode value in {text!r}") from None
        mode = cls(kind, value)
        mode.validate()
        return mode

    def validate(self) -> None:
        if self.kind == "fixed-qualifier":
            if self.value < 1 or self.value != int(self.value):
                raise ValueError("fixed-qualifier needs an integer n >= 1")
        elif self.kind == "fixed-percentage":
            if not 0 < self.value <= 100:
                raise ValueError("fixed-percentage needs 0 < p <= 100")
        else:
            raise ValueError(f"unknown subset kind {self.kind!r}")

    def __str__(self) -> str:
        v = int(self.value) if self.value == int(self.value) else self.value
        return f"{self.kind}:{v}"


def _percentage_split(facts: list[HyperFact], p: float, rng: np.random.Generator) -> list[HyperFact]:
    qualified = [i for i, f in enumerate(facts) if f.is_qualified]
    plain = [i for i, f in enumerate(facts) if not f.is_qualified]
    want = int(round(len(qualified) * (100.0 - p) / p))
    if want > len(plain):
        raise SubsetError(
            f"need {want} unqualified facts for {p}% but only {len(plain)} exist"
        )
    chosen = rng.choice(len(plain), size=want, replace=False) if want else np.array([], int)
    keep = sorted(qualified + [plain[i] for i in chosen])
    return [facts[i] for i in keep]


def build_subset(bundle: DatasetBundle, mode: SubsetMode, seed: int = 0) -> DatasetBundle:
    mode.validate()
    rng = np.random.default_rng(seed)
    out: dict[str, list[HyperFact] | None] = {"valid": None}
    for name, facts in bundle.splits.items():
        if mode.kind == "fixed-qualifier":
            n = int(mode.value)
            out[name] = [f for f in facts if len(f.qualifiers) == n]
        else:
            out[name] = _percentage_split(facts, mode.value, rng)
    if not out["train"] and not out["test"]:
        raise SubsetError(f"subset {mode} is empty")
    meta = dict(bundle.metadata)
    meta.update(
        scenario=f"{bundle.metadata.get('scenario', 'dataset')}[{mode}]",
        percentage=mode.value if mode.kind == "fixed-percentage" else None,
        arity=int(mode.value) if mode.kind == "fixed-qualifier" else None,
    )
    return reindex(bundle, out, meta)


# ---------------------------------------------------------------- statistics

# Published counts: train, valid, test, entities, relations.
PUBLISHED_COUNTS: dict[str, tuple[int, int | None, int, int, int]] = {
    "WD50K": (166435, 23913, 46159, 47155, 531),
    "WikiPeople": (294439, 37715, 37712, 34825, 178),
    "JF17K": (76379, None, 24568, 28645, 501),
    "WD50K_33": (73406, 10568, 18133, 38123, 474),
    "WD50K_66": (35968, 5154, 8045, 27346, 403),
    "WD50K_100": (22738, 3279, 5297, 18791, 278),
    "WikiPeople_33": (28280, 3550, 3542, 20921, 145),
    "WikiPeople_66": (14130, 1782, 1774, 13651, 133),
    "WikiPeople_100": (9319, 1181, 1173, 8068, 105),
    "JF17K_33": (56959, 8122, 9112, 24081, 490),
    "JF17K_66": (27280, 4413, 5403, 19288, 469),
    "JF17K_100": (17190, 3152, 4142, 12656, 307),
    "WikiPeople-3": (20656, 2582, 2582, 12270, 66),
    "WikiPeople-4": (12150, 1519, 1519, 9528, 50),
    "JF17K-3": (27635, 3454, 3455, 11541, 104),
    "JF17K-4": (7607, 951, 951, 6536, 23),
}


def _split_stats(facts: list[HyperFact]) -> dict:
    ents, rels = set(), set()
    for f in facts:
        ents.update((f.head, f.tail))
        rels.add(f.relation)
        for a, v in f.qualifiers:
            rels.add(a)
            ents.add(v)
    qualified = sum(f.is_qualified for f in facts)
    return {
        "facts": len(facts),
        "entities": len(ents),
        "relations": len(rels),
        "qualified_ratio": qualified / len(facts) if facts else 0.0,
    }


def dataset_stats(bundle: DatasetBundle) -> dict:
    splits = bundle.splits
    all_facts = [f for s in splits.values() for f in s]
    return {
        "scenario": bundle.metadata.get("scenario"),
        "train": len(bundle.train),
        "valid": None if bundle.valid is None else len(bundle.valid),
        "test": len(bundle.test),
        "entities": bundle.entities.n_real,
        "relations": bundle.relations.n_real,
        "qualified_ratio": _split_stats(all_facts)["qualified_ratio"],
        "per_split": {name: _split_stats(f) for name, f in splits.items()},
    }


def compare_published_counts(stats: dict, name: str) -> list[str]:
    """Return mismatch descriptions against the published counts (empty when equal)."""
    expected = PUBLISHED_COUNTS[name]
    got = (stats["train"], stats["valid"], stats["test"], stats["entities"], stats["relations"])
    labels = ("train", "valid", "test", "entities", "relations")
    return [f"{lab}: expected {e}, got {g}" for lab, e, g in zip(labels, expected, got) if e != g]
