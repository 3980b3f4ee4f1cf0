"""Sector-cone algebra: conversion, projection, qualifier shrink, intersection, scoring.

A cone holds a per-dimension axis angle in [-pi, pi) and an aperture in
[0, 2pi].  All operations accept arbitrary leading batch axes; set-valued
inputs to :func:`intersect` carry the set along axis -2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .layers import MLP, Linear, ParamStore
from .tensor import NumericError, Tensor

PI = math.pi
TWO_PI = 2.0 * math.pi


@dataclass
class Cone:
    axis: Tensor
    aperture: Tensor

    @property
    def shape(self) -> tuple[int, ...]:
        return self.axis.shape

    def numpy(self) -> tuple[np.ndarray, np.ndarray]:
        return self.axis.data, self.aperture.data

    def volume(self) -> np.ndarray:
        """Product of apertures over the last axis."""
        return np.prod(self.aperture.data, axis=-1)


class ConeParams:
    """Weights of every cone-space network.

    ``strict`` clamps the shrunk aperture to the parent aperture so each
    qualifier yields a contained cone; off by default.
    """

    def __init__(self, store: ParamStore, d: int, lambda1: float = 1.0, lambda2: float = 1.0,
                 strict: bool = False, prefix: str = "cone"):
        self.d = d
        self.lambda1 = lambda1
        self.lambda2 = lambda2
        self.strict = strict
        self.head_mlp = MLP(store, f"{prefix}/head", d, d)
        self.rel_mlp = MLP(store, f"{prefix}/rel", d, d)
        self.proj_mlp = MLP(store, f"{prefix}/proj", 4 * d, 2 * d)
        self.shrink_mlp1 = MLP(store, f"{prefix}/shrink1", d, d)
        self.shrink_mlp2 = MLP(store, f"{prefix}/shrink2", 3 * d, d)
        self.att_mlp = MLP(store, f"{prefix}/inter_att", 2 * d, d)
        self.gate_in = Linear(store, f"{prefix}/inter_gate1", 2 * d, d)
        self.gate_out = Linear(store, f"{prefix}/inter_gate2", d, d)
        self.score_mlp = MLP(store, f"{prefix}/score", 2 * d, d)


def axis_scale(x, lambda1: float) -> Tensor:
    """pi * tanh(lambda1 * x): squashes into (-pi, pi)."""
    return T.mul(T.tanh(T.mul(x, lambda1)), PI)


def aperture_scale(y, lambda2: float) -> Tensor:
    """pi * tanh(lambda2 * y) + pi: squashes into (0, 2pi)."""
    return T.add(T.mul(T.tanh(T.mul(y, lambda2)), PI), PI)


def _check_finite(x: Tensor, where: str) -> None:
    if not x.is_finite():
        raise NumericError(f"{where}: non-finite input")


def embed_to_cone(embedding: Tensor, mlp: MLP, lambda1: float = 1.0, lambda2: float = 1.0) -> Cone:
    """One MLP output feeds both the axis and the aperture squashers."""
    _check_finite(embedding, "embed_to_cone")
    z = mlp(embedding)
    return Cone(axis_scale(z, lambda1), aperture_scale(z, lambda2))


def head_cone(embedding: Tensor, params: ConeParams) -> Cone:
    return embed_to_cone(embedding, params.head_mlp, params.lambda1, params.lambda2)


def relation_cone(embedding: Tensor, params: ConeParams) -> Cone:
    return embed_to_cone(embedding, params.rel_mlp, params.lambda1, params.lambda2)


def project(cone_h: Cone, cone_r: Cone, params: ConeParams) -> Cone:
    feats = T.concat([cone_h.axis, cone_h.aperture, cone_r.axis, cone_r.aperture], axis=-1)
    z = params.proj_mlp(feats)
    d = params.d
    x = T.getitem(z, (..., slice(0, d)))
    y = T.getitem(z, (..., slice(d, 2 * d)))
    return Cone(axis_scale(x, params.lambda1), aperture_scale(y, params.lambda2))


@dataclass
class ShrinkTerms:
    qual_axis: Tensor
    qual_aperture: Tensor
    aperture: Tensor
    offset: Tensor
    axis_raw: Tensor
    axis: Tensor


def shrink_terms(cone_hr: Cone, e_r: Tensor, e_a: Tensor, e_v: Tensor, params: ConeParams) -> ShrinkTerms:
    """Intermediate quantities of the qualifier shrink.

    Order of evaluation: the shrunk aperture first, then the offset that
    uses it, then the new axis.
    """
    for x, nm in ((e_r, "relation"), (e_a, "attribute"), (e_v, "value")):
        _check_finite(x, f"shrink ({nm})")
    e_r = _broadcast_like(e_r, e_a)
    theta = params.shrink_mlp2(T.concat([e_r, e_a, e_v], axis=-1))
    z = params.shrink_mlp1(theta)
    qual_axis = axis_scale(z, params.lambda1)
    qual_aperture = aperture_scale(z, params.lambda2)
    beta_s = T.sigmoid(qual_aperture)
    if params.strict:
        beta_s = T.minimum(beta_s, cone_hr.aperture)
    offset = T.mul(T.sub(cone_hr.aperture, beta_s), T.sigmoid(qual_axis))
    raw = T.add(
        T.add(T.sub(cone_hr.axis, T.mul(cone_hr.aperture, 0.5)), T.mul(beta_s, 0.5)),
        T.mul(offset, 0.5),
    )
    return ShrinkTerms(qual_axis, qual_aperture, beta_s, offset, raw, T.wrap_angle(raw))


def shrink(cone_hr: Cone, e_r: Tensor, e_a: Tensor, e_v: Tensor, params: ConeParams) -> Cone:
    terms = shrink_terms(cone_hr, e_r, e_a, e_v, params)
    return Cone(terms.axis, terms.aperture)


def _broadcast_like(x: Tensor, ref: Tensor) -> Tensor:
    if x.shape == ref.shape:
        return x
    return T.add(x, np.zeros(ref.shape))


def stack_cones(cones: list[Cone]) -> Cone:
    return Cone(T.stack([c.axis for c in cones], axis=-2), T.stack([c.aperture for c in cones], axis=-2))


def intersect(cones, params: ConeParams, mask: np.ndarray | None = None) -> Cone:
    """Attention-weighted circular mean of axes; aperture = gate * min aperture.

    ``cones`` is a list of cones or one cone whose axis -2 indexes the set.
    ``mask`` (leading shape + set axis) marks real members.
    """
    if isinstance(cones, (list, tuple)):
        if not cones:
            raise ValueError("intersect needs at least one cone")
        cones = stack_cones(list(cones))
    if cones.shape[-2] == 0:
        raise ValueError("intersect needs at least one cone")
    alpha, beta = cones.axis, cones.aperture
    feats = T.concat([alpha, beta], axis=-1)
    att_logits = T.transpose(params.att_mlp(feats), _swap_last_two(alpha.ndim))
    smask = None if mask is None else np.asarray(mask, bool)[..., None, :]
    weights = T.transpose(T.softmax(att_logits, mask=smask), _swap_last_two(alpha.ndim))
    sin_sum = T.sum_(T.mul(weights, T.sin(alpha)), axis=-2)
    cos_sum = T.sum_(T.mul(weights, T.cos(alpha)), axis=-2)
    axis = T.wrap_angle(T.atan2(sin_sum, cos_sum))

    hidden = T.gelu(params.gate_in(feats))
    if mask is None:
        pooled = T.mean(hidden, axis=-2)
    else:
        m = np.asarray(mask, float)[..., None]
        pooled = T.div(T.sum_(T.mul(hidden, m), axis=-2), np.maximum(m.sum(axis=-2), 1.0))
    gate = T.sigmoid(params.gate_out(pooled))
    member_mask = None if mask is None else np.broadcast_to(np.asarray(mask, bool)[..., None], beta.shape)
    floor = T.min_(beta, axis=-2, mask=member_mask)
    return Cone(axis, T.mul(gate, floor))


def _swap_last_two(ndim: int) -> tuple[int, ...]:
    return tuple(range(ndim - 2)) + (ndim - 1, ndim - 2)


def contains(outer: Cone, inner: Cone, eps: float = 1e-9):
    """Arc containment per dimension, reduced with ``all`` over the last axis.

    Returns a bool (or a bool array over leading axes).
    """
    a_out, b_out = (np.asarray(x, float) for x in _arrays(outer))
    a_in, b_in = (np.asarray(x, float) for x in _arrays(inner))
    start_out = a_out - b_out / 2
    start_in = a_in - b_in / 2
    rel = np.mod(start_in - start_out + eps, TWO_PI) - eps
    ok = (b_out >= TWO_PI - eps) | ((b_in <= b_out + eps) & (rel + b_in <= b_out + eps))
    res = ok.all(axis=-1)
    return bool(res) if np.ndim(res) == 0 else res


def _arrays(c):
    if isinstance(c, Cone):
        return c.axis.data, c.aperture.data
    return c


def cone_to_logits(cone: Cone, entity_matrix: Tensor, params: ConeParams) -> Tensor:
    """MLP over (axis, aperture) then inner product with every entity row."""
    z = params.score_mlp(T.concat([cone.axis, cone.aperture], axis=-1))
    return T.matmul(z, T.transpose(entity_matrix))

