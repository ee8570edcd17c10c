"""Elementwise, reduction and shape ops with their reverse-mode rules."""
from __future__ import annotations

from typing import Optional, Sequence, Union

import numpy as np

from .tensor import ShapeError, Tensor, as_tensor, make_result, record_macs

Axis = Optional[Union[int, tuple[int, ...]]]


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _broadcast_shape(a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeError(f"cannot broadcast {a.shape} with {b.shape}") from exc


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)
    out = a.data + b.data
    record_macs("add", out.size)
    sa, sb = a.shape, b.shape
    return make_result(out, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)
    out = a.data - b.data
    record_macs("sub", out.size)
    sa, sb = a.shape, b.shape
    return make_result(out, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)
    out = a.data * b.data
    record_macs("mul", out.size)
    ad, bd = a.data, b.data
    return make_result(
        out,
        (a, b),
        lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
    )


def scale(a: Tensor, c: float) -> Tensor:
    out = a.data * c
    record_macs("scale", out.size)
    return make_result(out, (a,), lambda g: (g * c,))


def square(a: Tensor) -> Tensor:
    ad = a.data
    out = ad * ad
    record_macs("square", out.size)
    return make_result(out, (a,), lambda g: (2.0 * ad * g,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    out = np.where(mask, a.data, 0.0)
    return make_result(out, (a,), lambda g: (g * mask,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return make_result(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    ad = a.data
    if np.any(ad <= 0):
        raise FloatingPointError("log of non-positive value")
    return make_result(np.log(ad), (a,), lambda g: (g / ad,))


def sqrt(a: Tensor, eps: float = 0.0) -> Tensor:
    out = np.sqrt(a.data + eps)
    return make_result(out, (a,), lambda g: (g * 0.5 / out,))


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def _norm_axis(axis: Axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def sum_(a: Tensor, axis: Axis = None, keepdims: bool = False) -> Tensor:
    axes = _norm_axis(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)
    record_macs("sum", a.size)
    shape = a.shape

    def _bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).copy(),)

    return make_result(np.asarray(out), (a,), _bw)


def mean(a: Tensor, axis: Axis = None, keepdims: bool = False) -> Tensor:
    axes = _norm_axis(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    out = a.data.mean(axis=axes, keepdims=keepdims)
    record_macs("mean", a.size)
    shape = a.shape

    def _bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, shape).copy(),)

    return make_result(np.asarray(out), (a,), _bw)


# ---------------------------------------------------------------------------
# shape ops
# ---------------------------------------------------------------------------

def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    src = a.shape
    out = a.data.reshape(tuple(shape))
    return make_result(out, (a,), lambda g: (g.reshape(src),))


def transpose(a: Tensor, axes: Optional[Sequence[int]] = None) -> Tensor:
    if not axes:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    out = np.ascontiguousarray(a.data.transpose(axes))
    return make_result(out, (a,), lambda g: (g.transpose(inverse),))


def getitem(a: Tensor, index) -> Tensor:
    out = a.data[index]
    if isinstance(out, np.ndarray) and np.shares_memory(out, a.data):
        out = out.copy()
    shape = a.shape

    def _bw(g):
        full = np.zeros(shape, dtype=g.dtype)
        np.add.at(full, index, g)
        return (full,)

    return make_result(np.asarray(out), (a,), _bw)


def repeat(a: Tensor, repeats: int, axis: int) -> Tensor:
    """``np.repeat`` along one axis: each slice is copied ``repeats`` times in a row."""
    axis %= a.ndim
    out = np.repeat(a.data, repeats, axis=axis)
    shape = a.shape

    def _bw(g):
        split = shape[:axis] + (shape[axis], repeats) + shape[axis + 1 :]
        return (g.reshape(split).sum(axis=axis + 1),)

    return make_result(out, (a,), _bw)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat of an empty list")
    ndim = tensors[0].ndim
    axis %= ndim
    for t in tensors[1:]:
        if t.ndim != ndim or any(
            t.shape[d] != tensors[0].shape[d] for d in range(ndim) if d != axis
        ):
            raise ShapeError(f"concat shape mismatch: {[t.shape for t in tensors]}")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def _bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return make_result(out, tensors, _bw)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    shape = tensors[0].shape
    if any(t.shape != shape for t in tensors):
        raise ShapeError(f"stack shape mismatch: {[t.shape for t in tensors]}")
    out = np.stack([t.data for t in tensors], axis=axis)
    n = len(tensors)

    def _bw(g):
        return tuple(np.take(g, i, axis=axis) for i in range(n))

    return make_result(out, tensors, _bw)


def mean_over_first_axis(tensors: Sequence[Tensor]) -> Tensor:
    """Elementwise mean of a list of same-shape tensors."""
    if not tensors:
        raise ShapeError("mean of an empty list")
    return mean(stack(tensors, axis=0), axis=0)


# ---------------------------------------------------------------------------
# probability / distance helpers
# ---------------------------------------------------------------------------

def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    probs = np.exp(out)

    def _bw(g):
        return (g - probs * g.sum(axis=axis, keepdims=True),)

    return make_result(out, (a,), _bw)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def _bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return make_result(out, (a,), _bw)


def squared_euclidean(a, b) -> Tensor:
    """Sum of squared differences over the last axis (broadcasting on the rest)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[-1] != b.shape[-1]:
        raise ShapeError(f"vector length mismatch: {a.shape[-1]} vs {b.shape[-1]}")
    return sum_(square(sub(a, b)), axis=-1)


STD_EPS = 1e-10


def stats_pool(x: Tensor) -> Tensor:
    """Concatenate per-channel temporal mean and population std.

    ``x`` is ``(..., channels, T)``; the result is ``(..., 2*channels)``. The std
    is ``sqrt(var + 1e-10)`` so its derivative stays finite for constant input;
    channels that are exactly constant over time (always the case for ``T == 1``)
    report a std of exactly 0 and a mean equal to that constant.
    """
    x = as_tensor(x)
    if x.ndim < 2 or x.shape[-1] < 1:
        raise ShapeError(f"stats_pool needs (..., channels, T) with T >= 1, got {x.shape}")
    T = x.shape[-1]
    mu = x.data.mean(axis=-1)
    centered = x.data - mu[..., None]
    var = (centered * centered).mean(axis=-1)
    std = np.sqrt(var + STD_EPS)
    constant = x.data.max(axis=-1) == x.data.min(axis=-1)
    mu_out = np.where(constant, x.data[..., 0], mu)
    std_out = np.where(constant, 0.0, std)
    record_macs("stats_pool", 2 * x.size)
    C = x.shape[-2]

    def _bw(g):
        # the guarded std is used here; on constant channels ``centered`` is 0
        g_mean, g_std = g[..., :C], g[..., C:]
        return (g_mean[..., None] / T + (g_std / std)[..., None] * centered / T,)

    return make_result(np.concatenate([mu_out, std_out], axis=-1), (x,), _bw)
