"""Bidirectional LSTM as a single fused op with backprop-through-time.

Gate order inside every ``4*hidden`` block is (input, forget, cell, output);
initial hidden and cell states are zero.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import ShapeError, Tensor, as_tensor, make_result, record_macs


@dataclass
class LstmDirection:
    w_ih: Tensor  # (4*hidden, input_size)
    w_hh: Tensor  # (4*hidden, hidden)
    b: Tensor  # (4*hidden,)

    def tensors(self) -> list[Tensor]:
        return [self.w_ih, self.w_hh, self.b]


@dataclass
class BlstmParams:
    forward: LstmDirection
    backward: LstmDirection

    def __post_init__(self) -> None:
        for d in (self.forward, self.backward):
            four_h, n_in = d.w_ih.shape
            if four_h % 4 or d.w_hh.shape != (four_h, four_h // 4) or d.b.shape != (four_h,):
                raise ShapeError(
                    f"inconsistent LSTM blocks: w_ih {d.w_ih.shape}, w_hh {d.w_hh.shape}, b {d.b.shape}"
                )
        if self.forward.w_ih.shape != self.backward.w_ih.shape:
            raise ShapeError("forward and backward directions differ in shape")

    @property
    def input_size(self) -> int:
        return self.forward.w_ih.shape[1]

    @property
    def hidden_size(self) -> int:
        return self.forward.w_hh.shape[1]

    def tensors(self) -> list[Tensor]:
        return self.forward.tensors() + self.backward.tensors()


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (np.tanh(0.5 * z) + 1.0)


def _run_direction(x, w_ih, w_hh, b, reverse):
    B, T, _ = x.shape
    H = w_hh.shape[1]
    proj = x @ w_ih.T + b  # (B, T, 4H)
    gates = np.empty((B, T, 4 * H))
    cells = np.empty((B, T, H))
    hiddens = np.empty((B, T, H))
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    steps = range(T - 1, -1, -1) if reverse else range(T)
    for t in steps:
        z = proj[:, t] + h @ w_hh.T
        i = _sigmoid(z[:, :H])
        f = _sigmoid(z[:, H : 2 * H])
        g = np.tanh(z[:, 2 * H : 3 * H])
        o = _sigmoid(z[:, 3 * H :])
        c = f * c + i * g
        h = o * np.tanh(c)
        gates[:, t, :H], gates[:, t, H : 2 * H] = i, f
        gates[:, t, 2 * H : 3 * H], gates[:, t, 3 * H :] = g, o
        cells[:, t] = c
        hiddens[:, t] = h
    return hiddens, cells, gates


def _backprop_direction(x, w_ih, w_hh, cells, hiddens, gates, dh_out, reverse):
    B, T, _ = x.shape
    H = w_hh.shape[1]
    dz_all = np.empty((B, T, 4 * H))
    dw_hh = np.zeros_like(w_hh)
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    steps = list(range(T - 1, -1, -1)) if reverse else list(range(T))
    zeros = np.zeros((B, H))
    for k in range(T - 1, -1, -1):
        t = steps[k]
        prev = steps[k - 1] if k > 0 else None
        c_prev = cells[:, prev] if prev is not None else zeros
        h_prev = hiddens[:, prev] if prev is not None else zeros
        i, f = gates[:, t, :H], gates[:, t, H : 2 * H]
        g, o = gates[:, t, 2 * H : 3 * H], gates[:, t, 3 * H :]
        tc = np.tanh(cells[:, t])
        dh = dh_out[:, t] + dh_next
        dc = dh * o * (1.0 - tc * tc) + dc_next
        dz = np.empty((B, 4 * H))
        dz[:, :H] = dc * g * i * (1.0 - i)
        dz[:, H : 2 * H] = dc * c_prev * f * (1.0 - f)
        dz[:, 2 * H : 3 * H] = dc * i * (1.0 - g * g)
        dz[:, 3 * H :] = dh * tc * o * (1.0 - o)
        dc_next = dc * f
        dh_next = dz @ w_hh
        dw_hh += dz.T @ h_prev
        dz_all[:, t] = dz
    flat = dz_all.reshape(-1, 4 * H)
    dw_ih = flat.T @ x.reshape(-1, x.shape[2])
    db = flat.sum(axis=0)
    dx = dz_all @ w_ih
    return dx, dw_ih, dw_hh, db


def blstm_forward(seq: Tensor, params: BlstmParams) -> Tensor:
    """Run both directions over ``seq`` of shape ``(T, D)`` or ``(B, T, D)``.

    Returns ``(..., T, 2*hidden)``: forward states first, backward states last,
    both aligned to the same time index.
    """
    seq = as_tensor(seq)
    squeeze = seq.ndim == 2
    xb = seq.reshape((1,) + seq.shape) if squeeze else seq
    if xb.ndim != 3:
        raise ShapeError(f"expected (T, D) or (B, T, D), got {seq.shape}")
    B, T, D = xb.shape
    if T < 1:
        raise ShapeError("sequence must have at least one step")
    if D != params.input_size:
        raise ShapeError(f"input size {D} does not match BLSTM input size {params.input_size}")
    H = params.hidden_size
    fw, bw = params.forward, params.backward
    x = xb.data

    hf, cf, gf = _run_direction(x, fw.w_ih.data, fw.w_hh.data, fw.b.data, reverse=False)
    hb, cb, gb = _run_direction(x, bw.w_ih.data, bw.w_hh.data, bw.b.data, reverse=True)
    out = np.concatenate([hf, hb], axis=2)
    record_macs("blstm", B * T * 2 * 4 * H * (D + H))

    def _bw(g):
        dxf, *dfw = _backprop_direction(
            x, fw.w_ih.data, fw.w_hh.data, cf, hf, gf, g[:, :, :H], reverse=False
        )
        dxb, *dbw = _backprop_direction(
            x, bw.w_ih.data, bw.w_hh.data, cb, hb, gb, g[:, :, H:], reverse=True
        )
        return (dxf + dxb, *dfw, *dbw)

    y = make_result(out, (xb, *params.tensors()), _bw)
    return y.reshape(y.shape[1:]) if squeeze else y
