"""Dense float64 tensors with taped reverse-mode differentiation.

Gradients are only tracked while a Trace is active; outside of one every
operation is a plain numpy computation, so evaluation passes carry no
bookkeeping cost.  All values are 64-bit reals and every freshly created
tensor is checked for NaN/Inf, which is treated as a hard error.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np

from .errors import NumericError, ShapeError

_ACTIVE: list["Trace"] = []


def active_trace() -> "Trace | None":
    return _ACTIVE[-1] if _ACTIVE else None


@contextlib.contextmanager
def suspend_trace():
    """Temporarily disable taping, e.g. for action selection inside a
    recorded forward pass."""
    saved = _ACTIVE[:]
    _ACTIVE.clear()
    try:
        yield
    finally:
        _ACTIVE.extend(saved)


class Tensor:
    """A dense float64 array plus an optional gradient buffer.

    `requires_grad` marks trainable leaves; operation outputs inherit it
    while a trace is active.  `node_id` is the tensor's position in the
    trace that recorded it (None for leaves and untraced results).
    `grad_mask`, when set, marks entries that are structurally frozen and
    never receive gradient (used for the padding row of embedding tables).
    """

    __slots__ = ("data", "grad", "requires_grad", "node_id", "grad_mask")

    def __init__(self, data, requires_grad: bool = False):
        if type(data) is np.ndarray and data.dtype == np.float64:
            arr = data
        else:
            arr = np.asarray(data, dtype=np.float64)
        # a single reduction: any NaN/Inf entry makes the sum non-finite
        if not np.isfinite(arr.sum()):
            raise NumericError("tensor contains NaN or Inf")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.node_id: int | None = None
        self.grad_mask: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def parameter(data) -> Tensor:
    """A trainable leaf tensor."""
    return Tensor(data, requires_grad=True)


def glorot_uniform(rng: np.random.Generator, shape: Sequence[int],
                   fan_in: int, fan_out: int) -> Tensor:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return parameter(rng.uniform(-bound, bound, size=tuple(shape)))


class Trace:
    """Ordered record of taped operations.

    Records are appended in execution order, so the list is topologically
    ordered by construction; a tensor's node_id is its index here.
    """

    def __init__(self):
        self._records: list[tuple[Tensor, Callable[[np.ndarray], None]]] = []

    def __len__(self) -> int:
        return len(self._records)

    def __enter__(self) -> "Trace":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.pop()


def _acc(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _record(out_data: np.ndarray, inputs: tuple[Tensor, ...],
            backward_fn: Callable[[np.ndarray], None]) -> Tensor:
    trace = active_trace()
    if trace is None or not any(t.requires_grad for t in inputs):
        return Tensor(out_data)
    out = Tensor(out_data)
    out.requires_grad = True
    out.node_id = len(trace._records)
    trace._records.append((out, backward_fn))
    return out


def backward(root: Tensor, trace: Trace, seed: float = 1.0) -> None:
    """Populate grads of everything `root` depends on within `trace`.

    `root` must be scalar.  `seed` replaces the usual unit seed gradient,
    which lets a caller differentiate `seed * root` without taping the
    multiplication.  Gradient accumulation is additive, so grads must be
    cleared between independent steps.
    """
    if root.data.shape != ():
        raise ShapeError(f"backward root must be scalar, got shape {root.shape}")
    if root.grad is None:
        root.grad = np.zeros_like(root.data)
    root.grad += seed
    for out, fn in reversed(trace._records):
        if out.grad is not None:
            fn(out.grad)


# ---------------------------------------------------------------------------
# operations

def _require_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape {a.shape} vs {b.shape}")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner extents differ, {a.shape} x {b.shape}")
    ad, bd = a.data, b.data

    def back(g: np.ndarray) -> None:
        _acc(a, g @ bd.T)
        _acc(b, ad.T @ g)

    return _record(ad @ bd, (a, b), back)


def add(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "add")

    def back(g: np.ndarray) -> None:
        _acc(a, g)
        _acc(b, g)

    return _record(a.data + b.data, (a, b), back)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "sub")

    def back(g: np.ndarray) -> None:
        _acc(a, g)
        _acc(b, -g)

    return _record(a.data - b.data, (a, b), back)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "mul")
    ad, bd = a.data, b.data

    def back(g: np.ndarray) -> None:
        _acc(a, g * bd)
        _acc(b, g * ad)

    return _record(ad * bd, (a, b), back)


def add_n(parts: Sequence[Tensor]) -> Tensor:
    """Sum of same-shape tensors in one record."""
    if not parts:
        raise ShapeError("add_n of empty sequence")
    for p in parts[1:]:
        _require_same_shape(parts[0], p, "add_n")
    out = parts[0].data.copy()
    for p in parts[1:]:
        out += p.data

    def back(g: np.ndarray) -> None:
        for p in parts:
            _acc(p, g)

    return _record(out, tuple(parts), back)


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)

    def back(g: np.ndarray) -> None:
        _acc(a, g * s)

    return _record(a.data * s, (a,), back)


def add_rowvec(a: Tensor, b: Tensor) -> Tensor:
    """a[m,n] + b[n] broadcast over rows."""
    if a.data.ndim != 2 or b.data.ndim != 1 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"add_rowvec: {a.shape} + {b.shape}")

    def back(g: np.ndarray) -> None:
        _acc(a, g)
        _acc(b, g.sum(axis=0))

    return _record(a.data + b.data, (a, b), back)


def scale_rows(a: Tensor, weights: np.ndarray) -> Tensor:
    """Multiply row i of a[m,n] by the constant weights[i]."""
    w = np.asarray(weights, dtype=np.float64)
    if a.data.ndim != 2 or w.shape != (a.shape[0],):
        raise ShapeError(f"scale_rows: {a.shape} rows vs weights {w.shape}")
    col = w[:, None]

    def back(g: np.ndarray) -> None:
        _acc(a, g * col)

    return _record(a.data * col, (a,), back)


def tile_row(t: Tensor, n: int) -> Tensor:
    """n stacked copies of a single-row matrix."""
    if t.data.ndim != 2 or t.shape[0] != 1:
        raise ShapeError(f"tile_row expects a 1-row matrix, got {t.shape}")

    def back(g: np.ndarray) -> None:
        _acc(t, g.sum(axis=0, keepdims=True))

    return _record(np.repeat(t.data, n, axis=0), (t,), back)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0.0  # subgradient at exactly 0 is 0

    def back(g: np.ndarray) -> None:
        _acc(a, g * mask)

    return _record(np.maximum(a.data, 0.0), (a,), back)


def log(a: Tensor) -> Tensor:
    if not np.all(a.data > 0.0):
        raise NumericError("log of a non-positive value")
    ad = a.data

    def back(g: np.ndarray) -> None:
        _acc(a, g / ad)

    return _record(np.log(ad), (a,), back)


def sum_all(a: Tensor) -> Tensor:
    shape = a.data.shape

    def back(g: np.ndarray) -> None:
        _acc(a, np.broadcast_to(g, shape))

    return _record(np.asarray(a.data.sum()), (a,), back)


def softmax_rows(a: Tensor) -> Tensor:
    """Row-wise softmax with per-row max subtraction for stability."""
    if a.data.ndim != 2 or a.shape[1] < 1:
        raise ShapeError(f"softmax_rows expects m x n with n >= 1, got {a.shape}")
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=1, keepdims=True)

    def back(g: np.ndarray) -> None:
        dot = (g * s).sum(axis=1, keepdims=True)
        _acc(a, s * (g - dot))

    return _record(s, (a,), back)


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    if not parts:
        raise ShapeError("concat_cols of empty sequence")
    rows = parts[0].shape[0]
    for p in parts:
        if p.data.ndim != 2 or p.shape[0] != rows:
            raise ShapeError(f"concat_cols: row counts differ ({[q.shape for q in parts]})")
    widths = [p.shape[1] for p in parts]
    offsets = np.cumsum([0] + widths)

    def back(g: np.ndarray) -> None:
        for p, o, w in zip(parts, offsets, widths):
            _acc(p, g[:, o:o + w])

    return _record(np.concatenate([p.data for p in parts], axis=1), tuple(parts), back)


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    if not parts:
        raise ShapeError("concat_rows of empty sequence")
    cols = parts[0].shape[1]
    for p in parts:
        if p.data.ndim != 2 or p.shape[1] != cols:
            raise ShapeError(f"concat_rows: column counts differ ({[q.shape for q in parts]})")
    heights = [p.shape[0] for p in parts]
    offsets = np.cumsum([0] + heights)

    def back(g: np.ndarray) -> None:
        for p, o, h in zip(parts, offsets, heights):
            _acc(p, g[o:o + h])

    return _record(np.concatenate([p.data for p in parts], axis=0), tuple(parts), back)


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    if a.data.ndim != 2 or not (0 <= start <= stop <= a.shape[1]):
        raise ShapeError(f"slice_cols [{start}:{stop}] of {a.shape}")
    shape = a.data.shape

    def back(g: np.ndarray) -> None:
        full = np.zeros(shape)
        full[:, start:stop] = g
        _acc(a, full)

    return _record(a.data[:, start:stop].copy(), (a,), back)


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    if a.data.ndim != 2 or not (0 <= start <= stop <= a.shape[0]):
        raise ShapeError(f"slice_rows [{start}:{stop}] of {a.shape}")
    shape = a.data.shape

    def back(g: np.ndarray) -> None:
        full = np.zeros(shape)
        full[start:stop] = g
        _acc(a, full)

    return _record(a.data[start:stop].copy(), (a,), back)


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"transpose expects 2-D, got {a.shape}")

    def back(g: np.ndarray) -> None:
        _acc(a, g.T)

    return _record(np.ascontiguousarray(a.data.T), (a,), back)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    if int(np.prod(shape)) != a.data.size:
        raise ShapeError(f"reshape {a.shape} -> {shape}")
    orig = a.data.shape

    def back(g: np.ndarray) -> None:
        _acc(a, g.reshape(orig))

    return _record(a.data.reshape(shape).copy(), (a,), back)


def conv1d_valid(x: Tensor, w: Tensor) -> Tensor:
    """Valid 1-D convolution of x[L,d] with a single kernel w[h,d].

    Output position i is the full inner product of the kernel with the
    h-row window starting at i; there is no bias term.
    """
    if x.data.ndim != 2 or w.data.ndim != 2 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv1d_valid: x {x.shape} vs kernel {w.shape}")
    length, h = x.shape[0], w.shape[0]
    if length < h:
        raise ShapeError(f"conv1d_valid: input length {length} < kernel size {h}")
    win = np.lib.stride_tricks.sliding_window_view(x.data, h, axis=0)  # (T, d, h)
    wd = w.data
    out = np.einsum("tdh,hd->t", win, wd)
    steps = out.shape[0]

    def back(g: np.ndarray) -> None:
        dx = np.zeros_like(x.data)
        for j in range(h):
            dx[j:j + steps] += g[:, None] * wd[j]
        _acc(x, dx)
        _acc(w, np.einsum("t,tdh->hd", g, win))

    return _record(out, (x, w), back)


def conv1d_bank(x: Tensor, w: Tensor) -> Tensor:
    """Valid 1-D convolution of x[L,d] with a bank of kernels w[K,h,d] -> [K, L-h+1]."""
    if x.data.ndim != 2 or w.data.ndim != 3 or x.shape[1] != w.shape[2]:
        raise ShapeError(f"conv1d_bank: x {x.shape} vs bank {w.shape}")
    length, h = x.shape[0], w.shape[1]
    if length < h:
        raise ShapeError(f"conv1d_bank: input length {length} < kernel size {h}")
    win = np.lib.stride_tricks.sliding_window_view(x.data, h, axis=0)  # (T, d, h)
    wd = w.data
    out = np.einsum("tdh,khd->kt", win, wd)
    steps = out.shape[1]

    def back(g: np.ndarray) -> None:
        dx = np.zeros_like(x.data)
        for j in range(h):
            dx[j:j + steps] += g.T @ wd[:, j, :]
        _acc(x, dx)
        _acc(w, np.einsum("kt,tdh->khd", g, win))

    return _record(out, (x, w), back)


def max_over_time(e: Tensor) -> Tensor:
    """Maximum of a vector; ties route the gradient to the lowest index."""
    if e.data.ndim != 1 or e.shape[0] < 1:
        raise ShapeError(f"max_over_time expects a non-empty vector, got {e.shape}")
    idx = int(np.argmax(e.data))

    def back(g: np.ndarray) -> None:
        z = np.zeros_like(e.data)
        z[idx] = g
        _acc(e, z)

    return _record(np.asarray(e.data[idx]), (e,), back)


def max_rows(a: Tensor) -> Tensor:
    """Row-wise maximum of a[K,T] -> [K]; ties go to the lowest column."""
    if a.data.ndim != 2 or a.shape[1] < 1:
        raise ShapeError(f"max_rows expects K x T with T >= 1, got {a.shape}")
    idx = np.argmax(a.data, axis=1)
    rows = np.arange(a.shape[0])

    def back(g: np.ndarray) -> None:
        z = np.zeros_like(a.data)
        z[rows, idx] = g
        _acc(a, z)

    return _record(a.data[rows, idx], (a,), back)


def take_rows(table: Tensor, ids, skip_row: int | None = None) -> Tensor:
    """Gather rows of table[V,d] by integer ids.

    Gradient scatters back additively; rows equal to `skip_row` never
    receive gradient (structural freeze for the padding row).
    """
    idx = np.asarray(ids, dtype=np.intp)
    if table.data.ndim != 2 or idx.ndim != 1:
        raise ShapeError(f"take_rows: table {table.shape}, ids shape {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise ShapeError("take_rows: id out of range")

    def back(g: np.ndarray) -> None:
        z = np.zeros_like(table.data)
        if skip_row is None:
            np.add.at(z, idx, g)
        else:
            keep = idx != skip_row
            np.add.at(z, idx[keep], g[keep])
        _acc(table, z)

    return _record(table.data[idx], (table,), back)


def pick(a: Tensor, i: int, j: int) -> Tensor:
    """Single element a[i, j] as a scalar."""
    if a.data.ndim != 2:
        raise ShapeError(f"pick expects 2-D, got {a.shape}")
    if not (0 <= i < a.shape[0] and 0 <= j < a.shape[1]):
        raise ShapeError(f"pick ({i},{j}) out of range for {a.shape}")

    def back(g: np.ndarray) -> None:
        z = np.zeros_like(a.data)
        z[i, j] = g
        _acc(a, z)

    return _record(np.asarray(a.data[i, j]), (a,), back)
