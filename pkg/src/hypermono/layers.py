"""Parameter registry and the two small layer types every module reuses."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor


class ParamStore:
    """Ordered name -> parameter mapping with seeded uniform initialisation.

    Embedding tables are drawn from U[-init_range, init_range]; affine weights
    from U[-1/sqrt(fan_in), 1/sqrt(fan_in)]; biases start at zero and
    layer-norm gains at one.
    """

    def __init__(self, seed: int = 0, init_range: float = 0.02):
        self.rng = np.random.default_rng(seed)
        self.init_range = init_range
        self.params: dict[str, Tensor] = {}

    def _add(self, name: str, data: np.ndarray) -> Tensor:
        if name in self.params:
            raise KeyError(f"duplicate parameter {name!r}")
        p = T.parameter(data, name=name)
        self.params[name] = p
        return p

    def uniform(self, name: str, shape: tuple[int, ...]) -> Tensor:
        r = self.init_range
        return self._add(name, self.rng.uniform(-r, r, size=shape))

    def fan_in(self, name: str, shape: tuple[int, ...]) -> Tensor:
        r = 1.0 / np.sqrt(shape[0])
        return self._add(name, self.rng.uniform(-r, r, size=shape))

    def zeros(self, name: str, shape: tuple[int, ...]) -> Tensor:
        return self._add(name, np.zeros(shape))

    def ones(self, name: str, shape: tuple[int, ...]) -> Tensor:
        return self._add(name, np.ones(shape))


class Linear:
    def __init__(self, store: ParamStore, name: str, d_in: int, d_out: int):
        self.weight = store.fan_in(f"{name}/w", (d_in, d_out))
        self.bias = store.zeros(f"{name}/b", (d_out,))

    def __call__(self, x: Tensor) -> Tensor:
        return T.linear(x, self.weight, self.bias)


class MLP:
    """Two affine maps with a GELU in between."""

    def __init__(self, store: ParamStore, name: str, d_in: int, d_out: int, hidden: int | None = None):
        hidden = hidden or d_out
        self.fc1 = Linear(store, f"{name}/fc1", d_in, hidden)
        self.fc2 = Linear(store, f"{name}/fc2", hidden, d_out)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(T.gelu(self.fc1(x)))

    def parameters(self) -> list[Tensor]:
        return [self.fc1.weight, self.fc1.bias, self.fc2.weight, self.fc2.bias]
