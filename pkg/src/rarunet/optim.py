"""Named parameter collections and first-order optimizers."""
from __future__ import annotations

from typing import Dict, Iterator, Mapping, Tuple

import numpy as np

from .tensor import Tensor


class ParamSet(Mapping[str, Tensor]):
    """Trainable tensors keyed by dotted path, iterated in lexicographic order."""

    def __init__(self, params: Mapping[str, Tensor] | None = None):
        self._params: Dict[str, Tensor] = {}
        for name, t in (params or {}).items():
            self.add(name, t)

    def add(self, name: str, tensor: Tensor) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        tensor.requires_grad = True
        tensor.name = name
        self._params[name] = tensor
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __iter__(self) -> Iterator[str]:
        return iter(sorted(self._params))

    def __len__(self) -> int:
        return len(self._params)

    def count(self) -> int:
        return int(sum(t.size for t in self._params.values()))

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def copy_values(self) -> Dict[str, np.ndarray]:
        return {name: self[name].data.copy() for name in self}

    def load_values(self, values: Mapping[str, np.ndarray]) -> None:
        missing = set(self._params) - set(values)
        extra = set(values) - set(self._params)
        if missing or extra:
            raise KeyError(f"parameter mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, arr in values.items():
            t = self._params[name]
            if tuple(arr.shape) != t.shape:
                raise ValueError(f"shape mismatch for {name}: {arr.shape} vs {t.shape}")
            t.data = np.array(arr, dtype=t.dtype, copy=True)


def _check_grads(params: ParamSet) -> None:
    missing = [name for name in params if params[name].grad is None]
    if missing:
        raise RuntimeError(f"no gradient for parameters: {', '.join(missing)}")


class Adam:
    """Adaptive-moment updates with bias correction."""

    def __init__(self, params: ParamSet, lr: float = 1e-5, betas: Tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.step_count = 0
        self.m = {name: np.zeros_like(params[name].data) for name in params}
        self.v = {name: np.zeros_like(params[name].data) for name in params}

    def step(self) -> None:
        _check_grads(self.params)
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1 - b1 ** self.step_count
        c2 = 1 - b2 ** self.step_count
        for name in self.params:
            p = self.params[name]
            g = p.grad.astype(p.dtype, copy=False)
            m, v = self.m[name], self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            update = self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.data = p.data - update.astype(p.dtype, copy=False)


class SGD:
    def __init__(self, params: ParamSet, lr: float = 1e-2):
        self.params = params
        self.lr = lr

    def step(self) -> None:
        _check_grads(self.params)
        for name in self.params:
            p = self.params[name]
            p.data = p.data - (self.lr * p.grad).astype(p.dtype, copy=False)


def make_optimizer(kind: str, params: ParamSet, lr: float):
    if kind == "adam":
        return Adam(params, lr=lr)
    if kind == "sgd":
        return SGD(params, lr=lr)
    raise ValueError(f"unknown optimizer {kind!r}")
