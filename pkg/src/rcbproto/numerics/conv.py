"""Stride-1 2-D cross-correlation and its depthwise variant.

Inputs are ``(C, H, W)`` or batched ``(B, C, H, W)``. Kernels are not flipped.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels
from .tensor import ShapeError, Tensor, as_tensor, make_result, record_macs


def same_padding(k: int) -> tuple[int, int]:
    """Zero padding that keeps a stride-1 axis length; extra goes to the trailing side."""
    total = k - 1
    return total // 2, total - total // 2


def _paddings(kh: int, kw: int, padding: str) -> tuple[tuple[int, int], tuple[int, int]]:
    if padding == "same":
        return same_padding(kh), same_padding(kw)
    if padding == "valid":
        return (0, 0), (0, 0)
    raise ValueError(f"padding must be 'same' or 'valid', got {padding!r}")


def _as_batched(x: Tensor) -> tuple[Tensor, bool]:
    if x.ndim == 4:
        return x, False
    if x.ndim == 3:
        return x.reshape((1,) + x.shape), True
    raise ShapeError(f"expected (C,H,W) or (B,C,H,W) input, got {x.shape}")


@dataclass
class ConvKernel:
    """Weights ``(out, in, kh, kw)`` and bias ``(out,)`` of one conv layer."""

    weight: Tensor
    bias: Tensor

    def __post_init__(self) -> None:
        if self.weight.ndim != 4:
            raise ShapeError(f"conv weight must be 4-D, got {self.weight.shape}")
        if self.bias.shape != (self.weight.shape[0],):
            raise ShapeError(
                f"bias shape {self.bias.shape} does not match {self.weight.shape[0]} output channels"
            )

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1]

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    def __call__(self, x: Tensor, padding: str = "same") -> Tensor:
        return conv2d(x, self.weight, self.bias, padding)


def conv2d(
    x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, padding: str = "same"
) -> Tensor:
    """Multi-channel cross-correlation plus bias, stride 1."""
    x, weight = as_tensor(x), as_tensor(weight)
    xb, squeeze = _as_batched(x)
    if weight.ndim != 4:
        raise ShapeError(f"conv weight must be (out, in, kh, kw), got {weight.shape}")
    B, C, H, W = xb.shape
    O, Cw, kh, kw = weight.shape
    if Cw != C:
        raise ShapeError(f"input has {C} channels, kernel expects {Cw}")
    if min(B, C, H, W, O, kh, kw) <= 0:
        raise ShapeError("all dimensions must be positive")
    (pt, pb), (pl, pr) = _paddings(kh, kw, padding)
    Ho, Wo = H + pt + pb - kh + 1, W + pl + pr - kw + 1
    if Ho <= 0 or Wo <= 0:
        raise ShapeError(f"kernel {kh}x{kw} larger than input {H}x{W}")

    xp = np.pad(xb.data, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    # cols[b, (c, u, v), (i, j)] = xp[b, c, i + u, j + v]
    cols = np.empty((B, C, kh, kw, Ho, Wo))
    for u in range(kh):
        for v in range(kw):
            cols[:, :, u, v] = xp[:, :, u : u + Ho, v : v + Wo]
    cols = cols.reshape(B, C * kh * kw, Ho * Wo)
    wmat = weight.data.reshape(O, -1)
    out = wmat @ cols  # (B, O, Ho*Wo)
    if bias is not None:
        out += bias.data[:, None]
    out = out.reshape(B, O, Ho, Wo)
    record_macs("conv2d", C * kh * kw * Ho * Wo * O * B)

    def _bw(g):
        gmat = g.reshape(B, O, Ho * Wo)
        gw = None
        if weight.requires_grad:
            gw = np.matmul(gmat, cols.transpose(0, 2, 1)).sum(axis=0).reshape(weight.shape)
        gb = gmat.sum(axis=(0, 2)) if bias is not None and bias.requires_grad else None
        gx = None
        if xb.requires_grad:
            dcols = (wmat.T @ gmat).reshape(B, C, kh, kw, Ho, Wo)
            gxp = np.zeros_like(xp)
            for u in range(kh):
                for v in range(kw):
                    gxp[:, :, u : u + Ho, v : v + Wo] += dcols[:, :, u, v]
            gx = gxp[:, :, pt : pt + H, pl : pl + W]
        return gx, gw, gb

    parents = (xb, weight) + ((bias,) if bias is not None else ())
    y = make_result(out, parents, _bw)
    return y.reshape(y.shape[1:]) if squeeze else y


def depthwise_conv2d(
    x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, padding: str = "same"
) -> Tensor:
    """Per-channel cross-correlation: ``weight`` is ``(C, kh, kw)``, one kernel per channel."""
    x, weight = as_tensor(x), as_tensor(weight)
    xb, squeeze = _as_batched(x)
    B, C, H, W = xb.shape
    if weight.ndim != 3 or weight.shape[0] != C:
        raise ShapeError(f"need {C} per-channel kernels (C, kh, kw), got {weight.shape}")
    if bias is not None and bias.shape != (C,):
        raise ShapeError(f"depthwise bias must have shape ({C},), got {bias.shape}")
    _, kh, kw = weight.shape
    (pt, pb), (pl, pr) = _paddings(kh, kw, padding)
    Ho, Wo = H + pt + pb - kh + 1, W + pl + pr - kw + 1
    if Ho <= 0 or Wo <= 0:
        raise ShapeError(f"kernel {kh}x{kw} larger than input {H}x{W}")

    xp = np.pad(xb.data, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    wd = np.ascontiguousarray(weight.data)
    out = np.empty((B, C, Ho, Wo))
    _kernels.dw_forward(xp, wd, out)
    if bias is not None:
        out += bias.data[None, :, None, None]
    record_macs("depthwise_conv2d", C * kh * kw * Ho * Wo * B)

    def _bw(g):
        g = np.ascontiguousarray(g)
        gxp = np.zeros_like(xp)
        gw = np.zeros_like(wd)
        _kernels.dw_backward(xp, wd, g, gxp, gw)
        gb = g.sum(axis=(0, 2, 3)) if bias is not None and bias.requires_grad else None
        gx = gxp[:, :, pt : pt + H, pl : pl + W] if xb.requires_grad else None
        return gx, (gw if weight.requires_grad else None), gb

    parents = (xb, weight) + ((bias,) if bias is not None else ())
    y = make_result(out, parents, _bw)
    return y.reshape(y.shape[1:]) if squeeze else y
