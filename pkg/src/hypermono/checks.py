"""Seeded property scans behind the ``conecheck`` command and the acceptance suite."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import cone as C
from .layers import ParamStore
from .tensor import Tensor, no_grad


@dataclass
class ShrinkReport:
    instances: int
    draws: int
    violations: int
    lower_edge_error: float

    @property
    def ok(self) -> bool:
        return self.violations == 0


@dataclass
class IntersectReport:
    instances: int
    violations: int
    max_excess: float

    @property
    def ok(self) -> bool:
        return self.violations == 0


def _random_cone(rng: np.random.Generator, shape: tuple[int, ...]) -> C.Cone:
    axis = rng.uniform(-np.pi, np.pi, size=shape)
    aperture = rng.uniform(0.0, 2 * np.pi, size=shape)
    return C.Cone(Tensor(axis), Tensor(aperture))


def _circular_gap(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Absolute angular distance between ``a`` and ``b`` modulo 2pi."""
    diff = np.mod(a - b + np.pi, 2 * np.pi) - np.pi
    return np.abs(diff)


def shrink_containment_scan(instances: int = 10_000, d: int = 8, seed: int = 0,
                            init_range: float = 1.0, chunk: int = 4096) -> ShrinkReport:
    """Draw random parents and qualifier embeddings with fresh shrink weights per chunk.

    Only draws whose shrunk aperture fits inside the parent aperture in every
    dimension count as instances; for those the shrunk cone must lie inside
    the parent.  The lower-edge identity is measured on every draw.
    """
    rng = np.random.default_rng(seed)
    kept = draws = violations = 0
    worst_edge = 0.0
    with no_grad():
        while kept < instances:
            params = C.ConeParams(ParamStore(int(rng.integers(2**32)), init_range), d)
            parent = _random_cone(rng, (chunk, d))
            e_r, e_a, e_v = (Tensor(rng.normal(size=(chunk, d))) for _ in range(3))
            terms = C.shrink_terms(parent, e_r, e_a, e_v, params)
            a_hr, b_hr = parent.axis.data, parent.aperture.data
            a_s, b_s, off = terms.axis.data, terms.aperture.data, terms.offset.data
            lower_edge = _circular_gap(a_s - b_s / 2, a_hr - b_hr / 2 + off / 2)
            worst_edge = max(worst_edge, float(lower_edge.max()))
            eligible = np.all(b_s <= b_hr, axis=-1)
            idx = np.nonzero(eligible)[0][: instances - kept]
            inside = C.contains((a_hr[idx], b_hr[idx]), (a_s[idx], b_s[idx]))
            violations += int(np.count_nonzero(~np.atleast_1d(inside)))
            kept += len(idx)
            draws += chunk
    return ShrinkReport(kept, draws, violations, worst_edge)


def intersection_bound_scan(instances: int = 10_000, d: int = 8, max_set: int = 5, seed: int = 0,
                            init_range: float = 1.0, chunk: int = 2500) -> IntersectReport:
    """Random cone sets of size 1..max_set; output aperture must not exceed the member minimum."""
    rng = np.random.default_rng(seed)
    done = violations = 0
    worst = -np.inf
    with no_grad():
        while done < instances:
            n = min(chunk, instances - done)
            params = C.ConeParams(ParamStore(int(rng.integers(2**32)), init_range), d)
            size = int(rng.integers(1, max_set + 1))
            members = _random_cone(rng, (n, size, d))
            mask = None
            if size > 1:
                mask = rng.random((n, size)) < 0.8
                mask[:, 0] = True
            out = C.intersect(members, params, mask)
            beta = members.aperture.data
            if mask is not None:
                beta = np.where(mask[..., None], beta, np.inf)
            excess = out.aperture.data - beta.min(axis=-2)
            worst = max(worst, float(excess.max()))
            violations += int(np.count_nonzero(np.any(excess > 0, axis=-1)))
            done += n
    return IntersectReport(done, violations, worst)
