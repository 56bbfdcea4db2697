"""Differentiable operations on NCHW tensors.

Only the operations the segmentation network needs are provided. Each one
computes its forward value with numpy and registers a backward closure on the
output tensor.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from .tensor import ShapeError, Tensor


def as_tensor(value, like: Tensor | None = None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    dtype = like.dtype if like is not None else np.float64
    return Tensor(np.asarray(value, dtype=dtype))


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    if grad.shape == tuple(shape):
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _broadcast_shape(a: Tensor, b: Tensor, op: str):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)
    _broadcast_shape(a, b, "add")
    out = a.data + b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor._from_op(out, (a, b), backward)


def sub(a, b) -> Tensor:
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)
    _broadcast_shape(a, b, "sub")
    out = a.data - b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor._from_op(out, (a, b), backward)


def mul(a, b) -> Tensor:
    """Elementwise product with broadcasting over singleton axes.

    The usual cases are a spatial map (N x 1 x H x W) or a channel vector
    (N x C x 1 x 1) scaling a full feature map.
    """
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)
    _broadcast_shape(a, b, "mul")
    out = a.data * b.data

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return Tensor._from_op(out, (a, b), backward)


def div(a, b) -> Tensor:
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)
    _broadcast_shape(a, b, "div")
    out = a.data / b.data

    def backward(g):
        ga = g / b.data
        gb = -g * a.data / (b.data * b.data)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return Tensor._from_op(out, (a, b), backward)


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0)

    def backward(g):
        return (g * (x.data > 0),)

    return Tensor._from_op(out, (x,), backward)


def sigmoid(x: Tensor) -> Tensor:
    out = expit(x.data)

    def backward(g):
        return (g * out * (1 - out),)

    return Tensor._from_op(out, (x,), backward)


# ---------------------------------------------------------------- reductions

def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    out = np.sum(x.data, axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return Tensor._from_op(np.asarray(out, dtype=x.dtype), (x,), backward)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = x.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([x.shape[i] for i in axes]))
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / count)


def reduce(x: Tensor, axis: str, kind: str) -> Tensor:
    """Mean or max pooling over channels or over the spatial plane.

    ``axis="channel"`` gives an N x 1 x H x W map, ``axis="spatial"`` gives an
    N x C x 1 x 1 vector. Max gradients go to the first maximal element in
    row-major order.
    """
    if x.data.ndim != 4:
        raise ShapeError(f"reduce expects NCHW input, got shape {x.shape}")
    if kind not in ("mean", "max"):
        raise ValueError(f"unknown reduction {kind!r}")
    n, c, h, w = x.shape
    if axis == "channel":
        if kind == "mean":
            return mean(x, axis=1, keepdims=True)
        idx = np.argmax(x.data, axis=1)[:, None]
        out = np.take_along_axis(x.data, idx, axis=1)

        def backward(g):
            gx = np.zeros_like(x.data)
            np.put_along_axis(gx, idx, g, axis=1)
            return (gx,)

        return Tensor._from_op(out, (x,), backward)
    if axis == "spatial":
        if kind == "mean":
            return mean(x, axis=(2, 3), keepdims=True)
        flat = x.data.reshape(n, c, h * w)
        idx = np.argmax(flat, axis=2)[..., None]
        out = np.take_along_axis(flat, idx, axis=2).reshape(n, c, 1, 1)

        def backward(g):
            gx = np.zeros((n, c, h * w), dtype=x.dtype)
            np.put_along_axis(gx, idx, g.reshape(n, c, 1), axis=2)
            return (gx.reshape(x.shape),)

        return Tensor._from_op(out, (x,), backward)
    raise ValueError(f"unknown reduction axis {axis!r}")


# ---------------------------------------------------------------- layout

def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 4 or b.data.ndim != 4:
        raise ShapeError("concat_channels expects NCHW tensors")
    for dim, label in ((0, "batch"), (2, "height"), (3, "width")):
        if a.shape[dim] != b.shape[dim]:
            raise ShapeError(f"concat_channels: {label} mismatch {a.shape[dim]} vs {b.shape[dim]}")
    if a.shape[1] < 1 or b.shape[1] < 1:
        raise ShapeError("concat_channels: both operands need at least one channel")
    c1 = a.shape[1]
    out = np.concatenate([a.data, b.data], axis=1)

    def backward(g):
        return g[:, :c1], g[:, c1:]

    return Tensor._from_op(out, (a, b), backward)


def channel_slice(x: Tensor, start: int, stop: int) -> Tensor:
    if not 0 <= start < stop <= x.shape[1]:
        raise ShapeError(f"channel_slice [{start}, {stop}) out of range for {x.shape[1]} channels")
    out = x.data[:, start:stop]

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[:, start:stop] = g
        return (gx,)

    return Tensor._from_op(out, (x,), backward)


# ---------------------------------------------------------------- convolution

def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation with zero padding.

    Args:
        x: N x IC x H x W input.
        weight: OC x IC x k x k kernel.
        bias: optional length-OC vector.
        stride: 1 or 2.
        padding: zero rows/columns added on every side.
    """
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise ShapeError("conv2d expects NCHW input and OIkk weight")
    n, c, h, w = x.shape
    oc, ic, kh, kw = weight.shape
    if ic != c:
        raise ShapeError(f"conv2d: input channels {c} do not match weight input channels {ic}")
    if kh != kw:
        raise ShapeError(f"conv2d: kernel must be square, got {kh}x{kw}")
    if stride not in (1, 2):
        raise ShapeError(f"conv2d: stride must be 1 or 2, got {stride}")
    if bias is not None and bias.shape != (oc,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} does not match {oc} output channels")
    if h + 2 * padding < kh or w + 2 * padding < kw:
        raise ShapeError(f"conv2d: kernel {kh} larger than padded input {h + 2 * padding}x{w + 2 * padding}")

    p, s, k = padding, stride, kh
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::s, ::s]
    ho, wo = win.shape[2], win.shape[3]
    out = np.tensordot(win, weight.data, axes=([1, 4, 5], [1, 2, 3]))
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))
    if bias is not None:
        out += bias.data[None, :, None, None]

    def backward(g):
        gw = np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3])) if weight.requires_grad else None
        gb = g.sum(axis=(0, 2, 3)) if bias is not None and bias.requires_grad else None
        gx = None
        if x.requires_grad:
            cols = np.tensordot(weight.data, g, axes=([0], [1]))  # C, k, k, N, Ho, Wo
            gxp = np.zeros((c, n) + xp.shape[2:], dtype=x.dtype)
            for i in range(k):
                for j in range(k):
                    gxp[:, :, i:i + s * (ho - 1) + 1:s, j:j + s * (wo - 1) + 1:s] += cols[:, i, j]
            gxp = gxp.transpose(1, 0, 2, 3)
            gx = gxp[:, :, p:p + h, p:p + w] if p else gxp
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._from_op(out, parents, backward)


def conv_transpose2d(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """2x2, stride-2 transposed convolution: N x IC x H x W -> N x OC x 2H x 2W.

    ``weight`` has shape IC x OC x 2 x 2; input pixel (h, w) scatters into the
    output cell [2h:2h+2, 2w:2w+2].
    """
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise ShapeError("conv_transpose2d expects NCHW input and IOkk weight")
    n, c, h, w = x.shape
    ic, oc, kh, kw = weight.shape
    if ic != c:
        raise ShapeError(f"conv_transpose2d: input channels {c} do not match weight input channels {ic}")
    if (kh, kw) != (2, 2):
        raise ShapeError(f"conv_transpose2d: only 2x2 kernels are supported, got {kh}x{kw}")
    if bias is not None and bias.shape != (oc,):
        raise ShapeError(f"conv_transpose2d: bias shape {bias.shape} does not match {oc} output channels")

    out = np.tensordot(x.data, weight.data, axes=([1], [0]))  # N, H, W, OC, 2, 2
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 4, 2, 5)).reshape(n, oc, 2 * h, 2 * w)
    if bias is not None:
        out += bias.data[None, :, None, None]

    def backward(g):
        g6 = g.reshape(n, oc, h, 2, w, 2)
        gx = None
        if x.requires_grad:
            gx = np.tensordot(g6, weight.data, axes=([1, 3, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
        gw = np.tensordot(x.data, g6, axes=([0, 2, 3], [0, 2, 4])) if weight.requires_grad else None
        gb = g.sum(axis=(0, 2, 3)) if bias is not None and bias.requires_grad else None
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._from_op(out, parents, backward)


def maxpool2d(x: Tensor) -> Tensor:
    """2x2 max pooling with stride 2; ties go to the first element in row-major order."""
    if x.data.ndim != 4:
        raise ShapeError(f"maxpool2d expects NCHW input, got shape {x.shape}")
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(
            f"maxpool2d: spatial size {h}x{w} is odd; pad dataset images to a multiple of 16"
        )
    ho, wo = h // 2, w // 2
    cells = x.data.reshape(n, c, ho, 2, wo, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, 4)
    idx = np.argmax(cells, axis=-1)[..., None]
    out = np.take_along_axis(cells, idx, axis=-1)[..., 0]

    def backward(g):
        gc = np.zeros((n, c, ho, wo, 4), dtype=x.dtype)
        np.put_along_axis(gc, idx, g[..., None], axis=-1)
        gx = gc.reshape(n, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
        return (gx,)

    return Tensor._from_op(out, (x,), backward)
