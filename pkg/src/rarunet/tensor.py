"""Dense NCHW tensors with a reverse-mode differentiation graph.

Every differentiable operation (see :mod:`rarunet.ops`) returns a new
:class:`Tensor` that remembers its parents and a closure mapping the output
gradient to parent gradients. :meth:`Tensor.backward` walks that graph once
in reverse topological order.
"""
from __future__ import annotations

from contextlib import contextmanager
from typing import Callable, Optional, Sequence, Tuple

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class AutogradError(RuntimeError):
    """Misuse of the differentiation graph (double backward, non-scalar loss...)."""


_GRAD_ENABLED = True


@contextmanager
def no_grad():
    """Build no differentiation graph inside this block (forward-only evaluation)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


BackwardFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]


class Tensor:
    """A rank <= 4 array that can take part in reverse-mode differentiation.

    Args:
        data: array-like values. Floating dtypes are kept; anything else is
            cast to float64.
        requires_grad: whether gradients should be accumulated into ``grad``.
        name: optional label, used by parameter sets and error messages.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "_spent")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        if arr.ndim > 4:
            raise ShapeError(f"tensors are limited to rank 4, got shape {arr.shape}")
        self.data: np.ndarray = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents: Tuple["Tensor", ...] = ()
        self._backward: Optional[BackwardFn] = None
        self._spent = False

    @classmethod
    def _from_op(cls, data: np.ndarray, parents: Sequence["Tensor"], backward: BackwardFn) -> "Tensor":
        out = cls(data)
        if _GRAD_ENABLED and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        return out

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return int(self.data.size)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label}, requires_grad={self.requires_grad})"

    # operator sugar; implementations live in ops
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __neg__(self):
        from . import ops
        return ops.mul(self, -1.0)

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __rtruediv__(self, other):
        from . import ops
        return ops.div(other, self)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        from . import ops
        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        from . import ops
        return ops.mean(self, axis=axis, keepdims=keepdims)

    def backward(self) -> None:
        """Populate ``grad`` on every leaf reachable from this scalar.

        Gradients accumulate into existing ``grad`` arrays of leaves, so
        parameters shared across several uses (or several losses) sum up.
        The graph is released afterwards; a second call raises.
        """
        if self.data.size != 1:
            raise AutogradError(f"backward needs a single-element loss, got shape {self.shape}")
        if self._spent:
            raise AutogradError("backward already ran on this graph; rebuild it with a new forward pass")
        if not self.requires_grad:
            raise AutogradError("loss does not depend on any tensor that requires grad")

        order = _topological_order(self)
        if any(node._spent for node in order):
            raise AutogradError("graph shares nodes with an already back-propagated graph")
        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if node._backward is None:
                if node.requires_grad and g is not None:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            if g is None:
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        for node in order:
            if node._backward is not None:
                node._spent = True
                node._backward = None
                node._parents = ()
        self._spent = True


def _topological_order(root: Tensor) -> list:
    order: list = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    return order


def grad_check(
    fn: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    eps: float = 1e-5,
    max_coords: Optional[int] = None,
    directions: int = 0,
    seed: int = 0,
) -> float:
    """Compare analytic gradients against central finite differences.

    ``fn`` maps the input tensors to a scalar tensor. Returns the maximum of
    ``|analytic - numeric| / max(1, |numeric|)`` over the checked coordinates.
    All inputs must be float64.

    By default every coordinate of every input is perturbed. For large inputs
    ``max_coords`` limits each tensor to that many seeded coordinates, and
    ``directions`` adds checks along random unit directions spanning all
    inputs at once (analytic ``g . v`` against the central difference along
    ``v``), so no coordinate goes entirely unchecked.
    """
    for t in inputs:
        if t.dtype != np.float64:
            raise ValueError("grad_check requires float64 inputs")
        t.data = np.ascontiguousarray(t.data)
        t.requires_grad = True
        t.grad = None
    out = fn(*inputs)
    if not np.all(np.isfinite(out.data)):
        raise FloatingPointError("non-finite loss in grad_check")
    out.backward()

    def evaluate() -> float:
        with no_grad():
            v = fn(*inputs).item()
        if not np.isfinite(v):
            raise FloatingPointError("non-finite value during finite differencing")
        return v

    rng = np.random.default_rng(seed)
    worst = 0.0
    grads = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in inputs]
    for t, analytic in zip(inputs, grads):
        flat = t.data.reshape(-1)
        ga = analytic.reshape(-1)
        idx = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            idx = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            up = evaluate()
            flat[i] = orig - eps
            down = evaluate()
            flat[i] = orig
            numeric = (up - down) / (2 * eps)
            worst = max(worst, abs(ga[i] - numeric) / max(1.0, abs(numeric)))
    for _ in range(directions):
        vs = [rng.standard_normal(t.shape) for t in inputs]
        norm = np.sqrt(sum(float(np.sum(v * v)) for v in vs))
        vs = [v / norm for v in vs]
        originals = [t.data.copy() for t in inputs]
        for t, o, v in zip(inputs, originals, vs):
            t.data = o + eps * v
        up = evaluate()
        for t, o, v in zip(inputs, originals, vs):
            t.data = o - eps * v
        down = evaluate()
        for t, o in zip(inputs, originals):
            t.data = o
        numeric = (up - down) / (2 * eps)
        analytic = sum(float(np.sum(g * v)) for g, v in zip(grads, vs))
        worst = max(worst, abs(analytic - numeric) / max(1.0, abs(numeric)))
    return worst
