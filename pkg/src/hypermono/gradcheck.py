"""Central finite-difference comparison against tape gradients."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import NumericError, Tensor, backward, no_grad


# offsets (in units of h) and weights of central first-derivative stencils
STENCILS = {
    2: ((1.0, -1.0), (0.5, -0.5)),
    4: ((2.0, 1.0, -1.0, -2.0), (-1.0 / 12, 8.0 / 12, -8.0 / 12, 1.0 / 12)),
}
DEFAULT_STEP = {2: 1e-5, 4: 5e-4}


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    """|a - n| / max(|a|, |n|, floor); the floor keeps near-zero entries absolute."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def grad_check(
    closure: Callable[[], Tensor],
    params: dict[str, Tensor],
    h: float | None = None,
    max_coords: int = 256,
    seed: int = 0,
    floor: float = 1e-6,
    order: int = 2,
) -> dict[str, float]:
    """Return the max relative error per parameter.

    ``closure`` must be deterministic and return a scalar loss tensor.  At
    most ``max_coords`` coordinates per tensor are probed, chosen with a
    seeded generator.  ``order`` picks the central stencil: 2 is the plain
    two-point difference, 4 the five-point one whose smaller truncation error
    allows a larger step and therefore less cancellation noise.
    """
    if order not in STENCILS:
        raise ValueError(f"order must be one of {sorted(STENCILS)}")
    if h is None:
        h = DEFAULT_STEP[order]
    if h <= 0:
        raise ValueError("h must be positive")
    offsets, weights = STENCILS[order]
    for p in params.values():
        p.grad = None
    loss = closure()
    if not loss.is_finite():
        raise NumericError("grad_check: closure returned a non-finite loss")
    backward(loss, params.values())
    rng = np.random.default_rng(seed)
    report: dict[str, float] = {}
    for name, p in params.items():
        flat = p.data.reshape(-1)
        if flat.size <= max_coords:
            coords = np.arange(flat.size)
        else:
            coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        analytic = p.grad.reshape(-1)[coords]
        numeric = np.empty(len(coords))
        with no_grad():
            for j, c in enumerate(coords):
                orig = flat[c]
                values = []
                for off in offsets:
                    flat[c] = orig + off * h
                    values.append(closure().item())
                flat[c] = orig
                if not np.isfinite(values).all():
                    raise NumericError(f"grad_check: non-finite loss probing {name}[{c}]")
                numeric[j] = np.dot(weights, values) / h
        report[name] = float(relative_error(analytic, numeric, floor).max()) if len(coords) else 0.0
    return report
