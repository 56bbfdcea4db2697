"""Finite-difference checks for every differentiable operation and a toy-width model."""
from __future__ import annotations

from typing import Callable, Dict

import numpy as np

from . import ops
from .adl import dice_loss
from .arch import ArchConfig, attention_refine, build_model, residual_block_path
from .tensor import Tensor, grad_check


def _rand(rng, *shape, scale=1.0):
    return Tensor(rng.standard_normal(shape) * scale)


def _weighted(out: Tensor, rng) -> Tensor:
    # a random projection keeps symmetric cancellations from hiding errors
    w = Tensor(rng.standard_normal(out.shape))
    return ops.sum(ops.mul(out, w))


def _case(make: Callable[[np.random.Generator], tuple]) -> Callable[[], float]:
    def run() -> float:
        rng = np.random.default_rng(1234)
        fn, inputs = make(rng)
        return grad_check(fn, inputs)
    return run


def _conv(k, stride, padding, shape=(2, 3, 6, 6), oc=4):
    def make(rng):
        x = _rand(rng, *shape)
        w = _rand(rng, oc, shape[1], k, k, scale=0.5)
        b = _rand(rng, oc)
        proj = Tensor(rng.standard_normal(ops.conv2d(x, w, b, stride, padding).shape))
        return (lambda x, w, b: ops.sum(ops.mul(ops.conv2d(x, w, b, stride, padding), proj))), [x, w, b]
    return make


def _unary(op, shape=(2, 4, 8, 8)):
    def make(rng):
        x = _rand(rng, *shape)
        proj = Tensor(rng.standard_normal(op(x).shape))
        return (lambda x: ops.sum(ops.mul(op(x), proj))), [x]
    return make


def _binary(op, shape_a, shape_b, positive_b=False):
    def make(rng):
        a = _rand(rng, *shape_a)
        b = _rand(rng, *shape_b)
        if positive_b:
            b = Tensor(np.abs(b.data) + 0.5)
        proj = Tensor(rng.standard_normal(np.broadcast_shapes(shape_a, shape_b)))
        return (lambda a, b: ops.sum(ops.mul(op(a, b), proj))), [a, b]
    return make


def _conv_transpose(rng):
    x = _rand(rng, 2, 4, 3, 3)
    w = _rand(rng, 4, 3, 2, 2)
    b = _rand(rng, 3)
    proj = Tensor(rng.standard_normal((2, 3, 6, 6)))
    return (lambda x, w, b: ops.sum(ops.mul(ops.conv_transpose2d(x, w, b), proj))), [x, w, b]


def _concat(rng):
    a, b = _rand(rng, 2, 3, 4, 4), _rand(rng, 2, 2, 4, 4)
    proj = Tensor(rng.standard_normal((2, 5, 4, 4)))
    return (lambda a, b: ops.sum(ops.mul(ops.concat_channels(a, b), proj))), [a, b]


def _dice(rng):
    logits = _rand(rng, 1, 1, 4, 4)
    target = (rng.random((1, 1, 4, 4)) > 0.5).astype(np.float64)
    return (lambda z: dice_loss(ops.sigmoid(z), target)), [logits]


def _attention(learned: bool):
    def make(rng):
        f = _rand(rng, 2, 4, 6, 6)
        params = []
        if learned:
            params = [_rand(rng, 1, 2, 7, 7, scale=0.3), _rand(rng, 2, 4, 1, 1), _rand(rng, 2),
                      _rand(rng, 4, 2, 1, 1), _rand(rng, 4)]
        proj = Tensor(rng.standard_normal((2, 4, 6, 6)))

        def fn(f, *p):
            out = attention_refine(f, p[0], tuple(p[1:])) if p else attention_refine(f)
            return ops.sum(ops.mul(out, proj))
        return fn, [f, *params]
    return make


def _residual_path(rng):
    x = _rand(rng, 1, 3, 6, 6)
    params = []
    for _ in range(2):
        params += [_rand(rng, 3, 3, 3, 3, scale=0.3), _rand(rng, 3)]
    proj = Tensor(rng.standard_normal((1, 3, 6, 6)))

    def fn(x, *p):
        blocks = [(p[i], p[i + 1]) for i in range(0, len(p), 2)]
        return ops.sum(ops.mul(residual_block_path(x, blocks), proj))
    return fn, [x, *params]


def toy_model_check(seed: int = 0, base_channels: int = 2, size: int = 16,
                    max_coords: int = 6, directions: int = 32) -> float:
    """Full-model check at toy width, 64-bit.

    Every parameter tensor and the input get ``max_coords`` seeded coordinate
    probes; ``directions`` random whole-model directions cover the rest.
    Biases start at zero, which leaves ReLU and max-pool inputs sitting exactly
    on their kinks wherever a neighbourhood is dead; they are jittered first so
    the check runs at a differentiable point.
    """
    model = build_model(ArchConfig(base_channels=base_channels), seed=seed, dtype=np.float64)
    rng = np.random.default_rng(seed)
    for name in model.params:
        if name.endswith(".bias"):
            p = model.params[name]
            p.data = p.data + 0.1 * rng.standard_normal(p.shape)
    x = Tensor(rng.random((1, 1, size, size)))
    target = (rng.random((1, 1, size, size)) > 0.5).astype(np.float64)
    names = list(model.params)
    tensors = [x] + [model.params[n] for n in names]

    def fn(x, *_params):
        return dice_loss(model(x), target)

    return grad_check(fn, tensors, max_coords=max_coords, directions=directions, seed=seed)


CASES: Dict[str, Callable[[], float]] = {
    "conv2d 3x3 pad1": _case(_conv(3, 1, 1)),
    "conv2d 3x3 stride2": _case(_conv(3, 2, 1)),
    "conv2d 1x1": _case(_conv(1, 1, 0)),
    "conv2d 2x2 stride2": _case(_conv(2, 2, 0)),
    "conv2d 7x7 pad3": _case(_conv(7, 1, 3, shape=(1, 2, 8, 8), oc=1)),
    "conv_transpose2d": _case(_conv_transpose),
    "maxpool2d": _case(_unary(ops.maxpool2d)),
    "relu": _case(_unary(ops.relu)),
    "sigmoid": _case(_unary(ops.sigmoid)),
    "sigmoid chain": _case(_unary(lambda x: ops.sigmoid(ops.mul(ops.sigmoid(x), 3.0)))),
    "add (spatial broadcast)": _case(_binary(ops.add, (2, 4, 8, 8), (2, 1, 8, 8))),
    "mul (channel broadcast)": _case(_binary(ops.mul, (2, 4, 8, 8), (2, 4, 1, 1))),
    "mul (spatial broadcast)": _case(_binary(ops.mul, (2, 4, 8, 8), (2, 1, 8, 8))),
    "sub": _case(_binary(ops.sub, (2, 4, 8, 8), (2, 4, 8, 8))),
    "div": _case(_binary(ops.div, (2, 4, 8, 8), (2, 4, 8, 8), positive_b=True)),
    "concat_channels": _case(_concat),
    "channel mean": _case(_unary(lambda x: ops.reduce(x, "channel", "mean"))),
    "channel max": _case(_unary(lambda x: ops.reduce(x, "channel", "max"))),
    "spatial mean": _case(_unary(lambda x: ops.reduce(x, "spatial", "mean"))),
    "spatial max": _case(_unary(lambda x: ops.reduce(x, "spatial", "max"))),
    "dice_loss": _case(_dice),
    "attention (pooled sums)": _case(_attention(False)),
    "attention (learned)": _case(_attention(True)),
    "residual block path": _case(_residual_path),
    "toy model (base 2, 16x16)": toy_model_check,
}


def run_suite() -> Dict[str, float]:
    return {name: fn() for name, fn in CASES.items()}
