"""Named parameter storage, initialization and the Adam update."""
from __future__ import annotations

from collections.abc import Mapping

import numpy as np

from .tensor import DTYPE, DimensionError, Tensor


class ParamStore(Mapping):
    """Ordered name -> parameter tensor map with Adam moment buffers."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step = 0

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __iter__(self):
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def add(self, name: str, value) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(value, dtype=DTYPE), requires_grad=True, name=name)
        self._params[name] = t
        self.m[name] = np.zeros_like(t.data)
        self.v[name] = np.zeros_like(t.data)
        return t

    def weight(self, name: str, rng: np.random.Generator, fan_in: int, shape) -> Tensor:
        bound = 1.0 / np.sqrt(fan_in)
        return self.add(name, rng.uniform(-bound, bound, size=shape))

    def bias(self, name: str, shape) -> Tensor:
        return self.add(name, np.zeros(shape))

    def num_scalars(self) -> int:
        return sum(p.data.size for p in self._params.values())

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Flat view of parameters, moments and step counter for checkpointing."""
        out = {}
        for name, p in self._params.items():
            out[f"param/{name}"] = p.data
        for name in self._params:
            out[f"adam_m/{name}"] = self.m[name]
            out[f"adam_v/{name}"] = self.v[name]
        out["adam_step"] = np.array([float(self.step)])
        return out

    def load_state_arrays(self, arrays: Mapping[str, np.ndarray]) -> None:
        for name, p in self._params.items():
            key = f"param/{name}"
            if key not in arrays:
                raise KeyError(f"checkpoint lacks parameter {name!r}")
            src = arrays[key]
            if src.shape != p.data.shape:
                raise DimensionError(
                    f"parameter {name!r}: checkpoint shape {src.shape} vs model shape {p.data.shape}"
                )
            p.data[...] = src
            self.m[name][...] = arrays.get(f"adam_m/{name}", 0.0)
            self.v[name][...] = arrays.get(f"adam_v/{name}", 0.0)
        if "adam_step" in arrays:
            self.step = int(arrays["adam_step"][0])


def adam_step(store: ParamStore, grads: Mapping[str, np.ndarray], lr: float,
              betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8) -> ParamStore:
    b1, b2 = betas
    store.step += 1
    c1 = 1.0 - b1 ** store.step
    c2 = 1.0 - b2 ** store.step
    for name, p in store.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.data.shape:
            raise DimensionError(f"gradient for {name!r} has shape {g.shape}, parameter {p.data.shape}")
        m = store.m[name]
        v = store.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return store
