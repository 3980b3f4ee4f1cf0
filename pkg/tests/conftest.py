import numpy as np
import pytest

from hypermono.hkg import DatasetBundle, HyperFact, QualifierPair, Vocab, entity_vocab
from hypermono.synthetic import SyntheticSpec, gen_synthetic


def build_bundle(rows, test_rows=()):
    """Bundle from label tuples ``(h, r, t, a1, v1, ...)``."""
    ents, rels = entity_vocab(), Vocab()

    def fact(row):
        h, r, t, *rest = row
        quals = tuple(QualifierPair(rels.intern(a), ents.intern(v)) for a, v in zip(rest[::2], rest[1::2]))
        return HyperFact(ents.intern(h), rels.intern(r), ents.intern(t), quals)

    train = [fact(r) for r in rows]
    test = [fact(r) for r in test_rows]
    return DatasetBundle(train, test, ents, rels)


HARDEN_ROWS = [
    ("James_Harden", "member_of_team", "Houston_Rockets",
     "start_time", "2019", "end_time", "2023", "teammate", "PJ_Tucker"),
    ("James_Harden", "member_of_team", "Los_Angeles_Clippers",
     "start_time", "2019", "end_time", "2023", "teammate", "PJ_Tucker"),
    ("James_Harden", "member_of_team", "Philadelphia_76ers",
     "start_time", "2019", "end_time", "2023", "teammate", "PJ_Tucker", "part_of", "Atlantic_Division"),
    ("James_Harden", "member_of_team", "Brooklyn_Nets", "start_time", "2019", "end_time", "2023"),
    ("James_Harden", "award_received", "scoring_champion"),
    ("James_Harden", "participant_in", "2012_Summer_Olympics"),
    ("PJ_Tucker", "member_of_team", "Houston_Rockets", "start_time", "2017"),
]


@pytest.fixture
def harden():
    return build_bundle(HARDEN_ROWS)


@pytest.fixture(scope="session")
def small_bundle():
    return gen_synthetic(SyntheticSpec(entities=12, relations=3, facts=30, seed=1))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
