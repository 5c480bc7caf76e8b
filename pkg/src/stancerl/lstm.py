"""Bidirectional LSTM over a short row sequence, as one taped operation.

The four-gate cell (input/forget/output via logistic sigmoid, candidate
via tanh) runs once forward and once over the reversed sequence; the two
hidden-state sequences are concatenated per position.  The whole pass is
a single trace record with a hand-written backward-through-time rule,
which keeps the per-episode op count small.

Gate slices of every 4h-wide buffer are ordered [input, forget,
candidate, output].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, _acc, _record, glorot_uniform, parameter
from .errors import ShapeError


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # tanh form saturates gracefully at both ends without overflow
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass
class LstmDirection:
    """Parameters of one direction: wx[d,4h], wh[h,4h], b[4h]."""

    wx: Tensor
    wh: Tensor
    b: Tensor

    @classmethod
    def init(cls, input_dim: int, hidden: int, rng: np.random.Generator) -> "LstmDirection":
        wx = glorot_uniform(rng, (input_dim, 4 * hidden), input_dim, 4 * hidden)
        wh = glorot_uniform(rng, (hidden, 4 * hidden), hidden, 4 * hidden)
        b = np.zeros(4 * hidden)
        b[hidden:2 * hidden] = 1.0  # forget-gate bias starts open
        return cls(wx=wx, wh=wh, b=parameter(b))

    @property
    def hidden(self) -> int:
        return self.wh.shape[0]


def _run_direction(xs: np.ndarray, wx: np.ndarray, wh: np.ndarray, b: np.ndarray):
    steps, h = xs.shape[0], wh.shape[0]
    hs = np.zeros((steps, h))
    cache = []
    h_prev = np.zeros(h)
    c_prev = np.zeros(h)
    for t in range(steps):
        z = xs[t] @ wx + h_prev @ wh + b
        i = _sigmoid(z[:h])
        f = _sigmoid(z[h:2 * h])
        g = np.tanh(z[2 * h:3 * h])
        o = _sigmoid(z[3 * h:])
        c = f * c_prev + i * g
        tc = np.tanh(c)
        hs[t] = o * tc
        cache.append((xs[t], h_prev, c_prev, i, f, g, o, tc))
        h_prev = hs[t]
        c_prev = c
    return hs, cache


def _back_direction(dh_seq: np.ndarray, cache, wx: np.ndarray, wh: np.ndarray):
    steps = dh_seq.shape[0]
    h = wh.shape[0]
    dx = np.zeros((steps, wx.shape[0]))
    dwx = np.zeros_like(wx)
    dwh = np.zeros_like(wh)
    db = np.zeros(4 * h)
    dh_next = np.zeros(h)
    dc_next = np.zeros(h)
    for t in range(steps - 1, -1, -1):
        x, h_prev, c_prev, i, f, g, o, tc = cache[t]
        dh = dh_seq[t] + dh_next
        do = dh * tc
        dc = dc_next + dh * o * (1.0 - tc * tc)
        di = dc * g
        df = dc * c_prev
        dg = dc * i
        dz = np.concatenate([
            di * i * (1.0 - i),
            df * f * (1.0 - f),
            dg * (1.0 - g * g),
            do * o * (1.0 - o),
        ])
        dwx += np.outer(x, dz)
        dwh += np.outer(h_prev, dz)
        db += dz
        dx[t] = wx @ dz
        dh_next = wh @ dz
        dc_next = dc * f
    return dx, dwx, dwh, db


def lstm_bidirectional(seq: Tensor, fwd: LstmDirection, bwd: LstmDirection) -> Tensor:
    """Encode seq[N,d] into [N, 2h]: forward and backward states concatenated."""
    if seq.data.ndim != 2 or seq.shape[0] < 1:
        raise ShapeError(f"lstm_bidirectional expects N x d with N >= 1, got {seq.shape}")
    d = seq.shape[1]
    h = fwd.hidden
    if bwd.hidden != h or fwd.wx.shape != (d, 4 * h) or bwd.wx.shape != (d, 4 * h):
        raise ShapeError("lstm_bidirectional: parameter shapes do not match input width")

    xs = seq.data
    hs_f, cache_f = _run_direction(xs, fwd.wx.data, fwd.wh.data, fwd.b.data)
    hs_b_run, cache_b = _run_direction(xs[::-1].copy(), bwd.wx.data, bwd.wh.data, bwd.b.data)
    out = np.concatenate([hs_f, hs_b_run[::-1]], axis=1)

    wx_f, wh_f = fwd.wx.data, fwd.wh.data
    wx_b, wh_b = bwd.wx.data, bwd.wh.data

    def back(g: np.ndarray) -> None:
        dxf, dwxf, dwhf, dbf = _back_direction(g[:, :h], cache_f, wx_f, wh_f)
        dxb_run, dwxb, dwhb, dbb = _back_direction(g[::-1, h:].copy(), cache_b, wx_b, wh_b)
        _acc(seq, dxf + dxb_run[::-1])
        _acc(fwd.wx, dwxf)
        _acc(fwd.wh, dwhf)
        _acc(fwd.b, dbf)
        _acc(bwd.wx, dwxb)
        _acc(bwd.wh, dwhb)
        _acc(bwd.b, dbb)

    inputs = (seq, fwd.wx, fwd.wh, fwd.b, bwd.wx, bwd.wh, bwd.b)
    return _record(out, inputs, back)
