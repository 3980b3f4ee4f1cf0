import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hypermono import tensor as T
from hypermono.gradcheck import grad_check
from hypermono.layers import ParamStore
from hypermono.seqenc import (
    EncoderConfig,
    EncoderParams,
    Role,
    TokenSequence,
    VocabularyError,
    encode,
    encode_batch,
    make_batch,
)

N_ENT, N_REL = 12, 5


def setup(d=8, layers=2, heads=2, seed=0, **kw):
    store = ParamStore(seed, 0.3)
    ent = store.uniform("ent", (N_ENT, d))
    rel = store.uniform("rel", (N_REL, d))
    enc = EncoderParams(store, EncoderConfig(d=d, layers=layers, heads=heads, **kw), "enc")
    return store, ent, rel, enc


def qualified_seq(pairs):
    tokens = [3, 1, 0]
    roles = [Role.HEAD, Role.RELATION, Role.MASK]
    for a, v in pairs:
        tokens += [a, v]
        roles += [Role.ATTRIBUTE, Role.VALUE]
    return TokenSequence(tokens, roles)


class TestConfig:
    def test_divisibility(self):
        with pytest.raises(ValueError):
            EncoderConfig(d=10, heads=4)

    def test_layers(self):
        with pytest.raises(ValueError):
            EncoderConfig(layers=0)

    def test_default_ffn(self):
        assert EncoderConfig(d=16).ffn_width == 32


class TestEncode:
    def test_shape(self):
        _, ent, rel, enc = setup()
        out = encode(qualified_seq([(2, 5), (3, 7)]), ent, rel, enc)
        assert out.shape == (7, 8)

    def test_deterministic_without_training(self):
        _, ent, rel, enc = setup(input_dropout=0.5)
        seq = qualified_seq([(2, 5)])
        a = encode(seq, ent, rel, enc).data
        b = encode(seq, ent, rel, enc).data
        np.testing.assert_array_equal(a, b)
        c = encode(seq, ent, rel, enc, train=True, dropout_key=(1,)).data
        assert not np.array_equal(a, c)

    @given(st.permutations([(0, 4), (2, 5), (3, 9), (4, 11)]))
    @settings(max_examples=25, deadline=None)
    def test_qualifier_pair_permutation(self, perm):
        _, ent, rel, enc = setup(seed=7)
        base = encode(qualified_seq([(0, 4), (2, 5), (3, 9), (4, 11)]), ent, rel, enc).data[2]
        moved = encode(qualified_seq(perm), ent, rel, enc).data[2]
        np.testing.assert_allclose(moved, base, atol=1e-12)

    def test_swapping_attribute_and_value_changes_output(self):
        _, ent, rel, enc = setup(seed=7)
        a = encode(qualified_seq([(2, 4)]), ent, rel, enc).data[2]
        b = encode(qualified_seq([(4, 2)]), ent, rel, enc).data[2]
        assert not np.allclose(a, b)

    def test_override_replaces_token(self, rng):
        _, ent, rel, enc = setup()
        vec = T.Tensor(rng.normal(size=8))
        seq = TokenSequence([3, 1, 0], [Role.HEAD, Role.RELATION, Role.MASK], {0: vec})
        out = encode(seq, ent, rel, enc).data
        direct = ent.data.copy()
        direct[3] = vec.data
        want = encode(TokenSequence([3, 1, 0], [Role.HEAD, Role.RELATION, Role.MASK]),
                      T.Tensor(direct), rel, enc).data
        np.testing.assert_allclose(out, want, atol=1e-12)

    def test_override_dimension(self):
        _, ent, rel, enc = setup()
        seq = TokenSequence([3, 1, 0], [Role.HEAD, Role.RELATION, Role.MASK], {0: T.Tensor(np.ones(5))})
        with pytest.raises(ValueError):
            encode(seq, ent, rel, enc)

    @pytest.mark.parametrize("tokens,roles", [
        ([N_ENT, 1, 0], [Role.HEAD, Role.RELATION, Role.MASK]),
        ([3, N_REL, 0], [Role.HEAD, Role.RELATION, Role.MASK]),
        ([3, 1, -1], [Role.HEAD, Role.RELATION, Role.MASK]),
    ])
    def test_unknown_ids(self, tokens, roles):
        _, ent, rel, enc = setup()
        with pytest.raises(VocabularyError):
            encode(TokenSequence(tokens, roles), ent, rel, enc)

    def test_empty(self):
        _, ent, rel, enc = setup()
        with pytest.raises(ValueError):
            encode(TokenSequence([], []), ent, rel, enc)

    def test_padding_does_not_leak(self):
        _, ent, rel, enc = setup()
        short = qualified_seq([])
        long = qualified_seq([(2, 5), (3, 7)])
        batch = make_batch([short.tokens, long.tokens], [list(short.roles), list(long.roles)], N_ENT, N_REL)
        out = encode_batch(batch, ent, rel, enc).data
        np.testing.assert_allclose(out[0, :3], encode(short, ent, rel, enc).data, atol=1e-12)
        np.testing.assert_allclose(out[1], encode(long, ent, rel, enc).data, atol=1e-12)


class TestEncoderGradient:
    def test_two_layer_two_head(self, rng):
        store, ent, rel, enc = setup(d=8, seed=3)
        seq = qualified_seq([(2, 5), (3, 7)])
        w = rng.normal(size=8)

        def closure():
            return T.sum_(T.mul(T.getitem(encode(seq, ent, rel, enc), 2), w))

        report = grad_check(closure, store.params, max_coords=12, order=4)
        assert max(report.values()) < 1e-4, report
