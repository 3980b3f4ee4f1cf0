import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hypermono.hkg import Direction, Query, answers, save_dataset
from hypermono.synthetic import SyntheticSpec, disambiguation_spec, gen_synthetic


class TestSynthetic:
    def test_byte_identical(self, tmp_path):
        spec = SyntheticSpec(entities=50, relations=5, facts=200, seed=7)
        a = save_dataset(gen_synthetic(spec), tmp_path / "a")
        b = save_dataset(gen_synthetic(spec), tmp_path / "b")
        for name in ("train.txt", "test.txt"):
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_seed_changes_output(self):
        a = gen_synthetic(SyntheticSpec(seed=1))
        b = gen_synthetic(SyntheticSpec(seed=2))
        assert a.train != b.train

    def test_counts(self):
        bundle = gen_synthetic(SyntheticSpec(entities=20, relations=4, facts=60, test_fraction=0.25, seed=3))
        assert len(bundle.train) == 45 and len(bundle.test) == 15
        assert len({f.triple for f in bundle.train + bundle.test}) == 60

    @given(st.integers(0, 10_000))
    @settings(max_examples=15, deadline=None)
    def test_self_consistency(self, seed):
        bundle = gen_synthetic(SyntheticSpec(entities=25, relations=3, facts=60, disambiguation_groups=2,
                                             seed=seed))
        for f in bundle.train:
            for d in Direction:
                q = Query.from_fact(f, d)
                got = answers(q, bundle.graph)
                assert q.gold(f) in got
                assert bundle.ground_truth[q] == frozenset(got)

    def test_disambiguation_answer_counts(self):
        bundle = gen_synthetic(disambiguation_spec(0))
        for f in bundle.train:
            for d in Direction:
                plain = Query.from_fact(f, d, qualifiers=())
                full = Query.from_fact(f, d)
                assert len(answers(plain, bundle.graph)) == 3
                assert answers(full, bundle.graph) == {full.gold(f)}

    @pytest.mark.parametrize("spec", [
        SyntheticSpec(entities=3, relations=1, facts=7),
        SyntheticSpec(entities=0),
        SyntheticSpec(facts=10, disambiguation_groups=2),
    ])
    def test_infeasible(self, spec):
        with pytest.raises(ValueError):
            gen_synthetic(spec)
