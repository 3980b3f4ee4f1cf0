import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hypermono import cone as C
from hypermono import tensor as T
from hypermono.checks import intersection_bound_scan, shrink_containment_scan
from hypermono.gradcheck import grad_check
from hypermono.layers import ParamStore
from hypermono.tensor import NumericError, Tensor

PI = math.pi


def make_params(d=4, seed=0, init_range=0.5, **kw):
    store = ParamStore(seed, init_range)
    return store, C.ConeParams(store, d, **kw)


def zero_all(store):
    for p in store.params.values():
        p.data[...] = 0.0


def cone(axis, aperture):
    return C.Cone(Tensor(np.asarray(axis, float)), Tensor(np.asarray(aperture, float)))


def in_ranges(c):
    a, b = c.numpy()
    return np.all(a >= -PI) and np.all(a < PI) and np.all(b >= 0) and np.all(b <= 2 * PI)


class TestConversion:
    def test_zero_preactivation(self):
        store, params = make_params()
        zero_all(store)
        c = C.head_cone(Tensor(np.ones(4)), params)
        np.testing.assert_allclose(c.axis.data, 0.0)
        np.testing.assert_allclose(c.aperture.data, PI)

    def test_saturation_limits(self):
        assert C.axis_scale(np.array([50.0]), 1.0).data[0] == pytest.approx(PI)
        assert C.aperture_scale(np.array([50.0]), 1.0).data[0] == pytest.approx(2 * PI)
        assert C.aperture_scale(np.array([-50.0]), 1.0).data[0] == pytest.approx(0.0)

    def test_range_scan(self, rng):
        _, params = make_params(d=4, init_range=2.0)
        c = C.relation_cone(Tensor(rng.normal(0, 3, size=(10_000, 4))), params)
        assert in_ranges(c)

    def test_nonfinite_input(self):
        _, params = make_params()
        with pytest.raises(NumericError):
            C.head_cone(Tensor(np.array([0.0, np.nan, 0.0, 0.0])), params)

    def test_lambda_scales_slope(self):
        a1 = C.axis_scale(np.array([0.1]), 1.0).data[0]
        a2 = C.axis_scale(np.array([0.1]), 2.0).data[0]
        assert a2 > a1 > 0


class TestProjection:
    def test_zero_weights(self, rng):
        store, params = make_params()
        zero_all(store)
        out = C.project(cone(rng.uniform(-1, 1, 4), rng.uniform(0, 6, 4)),
                        cone(rng.uniform(-1, 1, 4), rng.uniform(0, 6, 4)), params)
        np.testing.assert_allclose(out.axis.data, 0.0)
        np.testing.assert_allclose(out.aperture.data, PI)

    def test_deterministic_and_valid(self, rng):
        _, params = make_params(init_range=1.0)
        h = cone(rng.uniform(-PI, PI, (500, 4)), rng.uniform(0, 2 * PI, (500, 4)))
        r = cone(rng.uniform(-PI, PI, (500, 4)), rng.uniform(0, 2 * PI, (500, 4)))
        a = C.project(h, r, params)
        b = C.project(h, r, params)
        np.testing.assert_array_equal(a.axis.data, b.axis.data)
        assert in_ranges(a)


class TestShrink:
    def qual(self, rng, n=1, d=4):
        return [Tensor(rng.normal(size=(n, d))) for _ in range(3)]

    def test_aperture_in_unit_interval(self, rng):
        _, params = make_params(init_range=1.0)
        parent = cone(rng.uniform(-PI, PI, (200, 4)), rng.uniform(0, 2 * PI, (200, 4)))
        s = C.shrink(parent, *self.qual(rng, 200), params)
        assert np.all(s.aperture.data > 0) and np.all(s.aperture.data < 1)
        assert in_ranges(s)

    def test_lower_edge_identity(self, rng):
        _, params = make_params(init_range=1.0)
        parent = cone(rng.uniform(-PI, PI, (300, 4)), rng.uniform(0, 2 * PI, (300, 4)))
        t = C.shrink_terms(parent, *self.qual(rng, 300), params)
        lhs = t.axis_raw.data - t.aperture.data / 2
        rhs = parent.axis.data - parent.aperture.data / 2 + t.offset.data / 2
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)

    def test_offset_floor_when_axis_saturates(self, rng):
        store, params = make_params(init_range=1.0)
        # the qualifier axis lives in (-pi, pi), so sigma of it bottoms out at sigma(-pi)
        store.params["cone/shrink1/fc2/b"].data[...] = -60.0
        store.params["cone/shrink1/fc2/w"].data[...] = 0.0
        parent = cone(rng.uniform(-1, 1, (1, 4)), np.full((1, 4), 3.0))
        t = C.shrink_terms(parent, *self.qual(rng), params)
        floor = 1.0 / (1.0 + math.exp(PI))
        np.testing.assert_allclose(t.offset.data, (3.0 - t.aperture.data) * floor, rtol=1e-12)
        gap = (t.axis.data - t.aperture.data / 2) - (parent.axis.data - parent.aperture.data / 2)
        np.testing.assert_allclose(gap, t.offset.data / 2, atol=1e-12)

    def test_equal_aperture_keeps_axis(self, rng):
        store, params = make_params(init_range=1.0)
        parent_aperture = 1.0 / (1.0 + math.exp(-PI))  # sigma(g(0))
        store.params["cone/shrink1/fc2/w"].data[...] = 0.0
        parent = cone(rng.uniform(-1, 1, (1, 4)), np.full((1, 4), parent_aperture))
        t = C.shrink_terms(parent, *self.qual(rng), params)
        np.testing.assert_allclose(t.aperture.data, parent_aperture)
        np.testing.assert_allclose(t.offset.data, 0.0, atol=1e-15)
        np.testing.assert_allclose(t.axis.data, parent.axis.data, atol=1e-12)

    def test_containment_scan(self):
        rep = shrink_containment_scan(10_000, seed=11)
        assert rep.instances == 10_000 and rep.violations == 0
        assert rep.lower_edge_error <= 1e-12

    def test_small_parent_escapes_without_strict(self, rng):
        _, params = make_params(init_range=1.0)
        parent = cone(np.zeros((50, 4)), np.full((50, 4), 1e-3))
        s = C.shrink(parent, *self.qual(rng, 50), params)
        assert not np.all(C.contains(parent, s))

    def test_strict_mode_always_contained(self, rng):
        _, params = make_params(init_range=1.0, strict=True)
        parent = cone(rng.uniform(-PI, PI, (500, 4)), rng.uniform(0, 0.5, (500, 4)))
        s = C.shrink(parent, *self.qual(rng, 500), params)
        assert np.all(C.contains(parent, s))


class TestIntersect:
    def test_single_cone(self, rng):
        _, params = make_params()
        c = cone(rng.uniform(-3, 3, (1, 4)), rng.uniform(0, 6, (1, 4)))
        out = C.intersect([c], params)
        np.testing.assert_allclose(out.axis.data, c.axis.data, atol=1e-12)
        assert np.all(out.aperture.data <= c.aperture.data)

    def test_identical_cones_keep_axis(self, rng):
        _, params = make_params()
        c = cone(rng.uniform(-3, 3, (2, 4)), rng.uniform(0, 6, (2, 4)))
        out = C.intersect([c, c, c], params)
        np.testing.assert_allclose(out.axis.data, c.axis.data, atol=1e-12)

    def test_mask_drops_members(self, rng):
        _, params = make_params()
        a = cone(rng.uniform(-3, 3, (1, 4)), rng.uniform(0, 6, (1, 4)))
        b = cone(rng.uniform(-3, 3, (1, 4)), rng.uniform(0, 6, (1, 4)))
        masked = C.intersect([a, b], params, mask=np.array([[True, False]]))
        alone = C.intersect([a], params)
        np.testing.assert_allclose(masked.axis.data, alone.axis.data, atol=1e-12)
        np.testing.assert_allclose(masked.aperture.data, alone.aperture.data, atol=1e-12)

    def test_empty(self):
        _, params = make_params()
        with pytest.raises(ValueError):
            C.intersect([], params)

    def test_bound_scan(self):
        rep = intersection_bound_scan(10_000, seed=5)
        assert rep.violations == 0 and rep.max_excess <= 0

    @given(arrays(np.float64, (3, 4), elements=st.floats(-PI, PI - 1e-9)),
           arrays(np.float64, (3, 4), elements=st.floats(0, 2 * PI)))
    @settings(max_examples=40, deadline=None)
    def test_bound_property(self, axes, apertures):
        _, params = make_params(seed=3)
        out = C.intersect(cone(axes, apertures), params)
        assert np.all(out.aperture.data <= apertures.min(axis=0))
        assert in_ranges(out)


class TestContains:
    def test_reflexive(self, rng):
        c = cone(rng.uniform(-PI, PI, 8), rng.uniform(0, 2 * PI, 8))
        assert C.contains(c, c)

    def test_full_circle(self, rng):
        inner = cone(rng.uniform(-PI, PI, 8), rng.uniform(0, 2 * PI, 8))
        assert C.contains(cone(np.zeros(8), np.full(8, 2 * PI)), inner)

    def test_hand_arcs(self):
        outer = cone([0.0], [PI])
        assert C.contains(outer, cone([0.0], [PI / 2]))
        assert not C.contains(outer, cone([PI], [PI / 2]))

    def test_wraparound(self):
        outer = cone([PI - 0.1], [1.0])  # arc straddles the +-pi seam
        assert C.contains(outer, cone([-PI + 0.1], [0.2]))
        assert not C.contains(outer, cone([0.0], [0.2]))

    @given(st.floats(-PI, PI - 1e-6), st.floats(0.01, 6.0), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
    @settings(max_examples=100, deadline=None)
    def test_against_sampled_points(self, a_out, b_out, frac_w, frac_pos):
        b_in = frac_w * b_out
        start = a_out - b_out / 2 + frac_pos * (b_out - b_in)
        inner = cone([start + b_in / 2], [b_in])
        assert C.contains(cone([a_out], [b_out]), inner, eps=1e-7)


class TestScoring:
    def test_zero_weights_uniform(self, rng):
        store, params = make_params()
        zero_all(store)
        logits = C.cone_to_logits(cone(rng.uniform(-1, 1, (2, 4)), rng.uniform(0, 6, (2, 4))),
                                  Tensor(rng.normal(size=(7, 4))), params)
        assert logits.shape == (2, 7)
        np.testing.assert_allclose(T.softmax(logits).data, 1 / 7)

    def test_deterministic(self, rng):
        _, params = make_params()
        c = cone(rng.uniform(-1, 1, (2, 4)), rng.uniform(0, 6, (2, 4)))
        e = Tensor(rng.normal(size=(7, 4)))
        np.testing.assert_array_equal(C.cone_to_logits(c, e, params).data, C.cone_to_logits(c, e, params).data)

    def test_pipeline_gradient(self, rng):
        store, params = make_params(d=3, init_range=0.5)
        emb = {"h": T.parameter(rng.normal(size=(2, 3))), "r": T.parameter(rng.normal(size=(2, 3))),
               "a": T.parameter(rng.normal(size=(2, 3))), "v": T.parameter(rng.normal(size=(2, 3))),
               "E": T.parameter(rng.normal(size=(5, 3)))}
        w = rng.normal(size=(2, 5))

        def closure():
            hr = C.project(C.head_cone(emb["h"], params), C.relation_cone(emb["r"], params), params)
            s = C.shrink(hr, emb["r"], emb["a"], emb["v"], params)
            out = C.intersect([hr, s], params)
            return T.sum_(T.mul(C.cone_to_logits(out, emb["E"], params), w))

        report = grad_check(closure, {**emb, **store.params}, max_coords=20, order=4)
        assert max(report.values()) < 1e-4, report
