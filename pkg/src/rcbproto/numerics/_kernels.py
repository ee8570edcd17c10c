"""Loop kernels for the depthwise convolution.

numba-compiled when numba is importable; otherwise the numpy versions below
are used. Both paths are tested against each other.
"""
from __future__ import annotations

import os

import numpy as np

try:  # pragma: no cover - exercised implicitly
    if os.environ.get("RCBPROTO_DISABLE_NUMBA"):
        raise ImportError
    from numba import njit
except ImportError:  # pragma: no cover
    njit = None


def dw_forward_np(xp: np.ndarray, w: np.ndarray, out: np.ndarray) -> None:
    _, _, Ho, Wo = out.shape
    _, kh, kw = w.shape
    out[...] = 0.0
    for u in range(kh):
        for v in range(kw):
            out += w[None, :, u, v, None, None] * xp[:, :, u : u + Ho, v : v + Wo]


def dw_backward_np(xp, w, g, gxp, gw) -> None:
    _, _, Ho, Wo = g.shape
    _, kh, kw = w.shape
    for u in range(kh):
        for v in range(kw):
            win = xp[:, :, u : u + Ho, v : v + Wo]
            gw[:, u, v] = np.einsum("bchw,bchw->c", g, win, optimize=True)
            gxp[:, :, u : u + Ho, v : v + Wo] += w[None, :, u, v, None, None] * g


def _dw_forward_loops(xp, w, out):
    B, C, Ho, Wo = out.shape
    kh, kw = w.shape[1], w.shape[2]
    for b in range(B):
        for c in range(C):
            for i in range(Ho):
                for j in range(Wo):
                    out[b, c, i, j] = 0.0
                for u in range(kh):
                    for v in range(kw):
                        wv = w[c, u, v]
                        for j in range(Wo):
                            out[b, c, i, j] += wv * xp[b, c, i + u, j + v]


def _dw_backward_loops(xp, w, g, gxp, gw):
    B, C, Ho, Wo = g.shape
    kh, kw = w.shape[1], w.shape[2]
    gw[...] = 0.0
    for b in range(B):
        for c in range(C):
            for i in range(Ho):
                for u in range(kh):
                    for v in range(kw):
                        wv = w[c, u, v]
                        acc = 0.0
                        for j in range(Wo):
                            gij = g[b, c, i, j]
                            acc += gij * xp[b, c, i + u, j + v]
                            gxp[b, c, i + u, j + v] += wv * gij
                        gw[c, u, v] += acc


if njit is not None:
    dw_forward = njit(cache=True, nogil=True)(_dw_forward_loops)
    dw_backward = njit(cache=True, nogil=True)(_dw_backward_loops)
    HAVE_NUMBA = True
else:  # pragma: no cover
    dw_forward = dw_forward_np
    dw_backward = dw_backward_np
    HAVE_NUMBA = False
