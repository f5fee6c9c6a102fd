"""Dense tensors with a tape-based reverse-mode autodiff.

Operations executed while a :class:`Tape` is active are recorded when at
least one operand requires a gradient.  :func:`backward` replays the tape in
reverse and returns gradients for every leaf that requires one.

>>> w = Tensor([1.0, 2.0], requires_grad=True)
>>> with Tape() as tape:
...     loss = mean(w * Tensor([3.0, 4.0]))
>>> backward(tape, loss)[w]
array([1.5, 2. ])
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from ..errors import ConfigurationError, UsageError

_state = threading.local()


def _tape_stack() -> list:
    stack = getattr(_state, "stack", None)
    if stack is None:
        stack = _state.stack = []
    return stack


def active_tape() -> "Tape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """A numpy array plus autodiff bookkeeping.

    Float arrays keep their dtype; anything else is converted to float64.
    Hashing is by identity so tensors can key gradient dictionaries.
    """

    __slots__ = ("data", "requires_grad", "is_leaf", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        arr = np.asarray(data, dtype=dtype)
        if dtype is None and not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.is_leaf = True
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numel(self) -> int:
        return int(self.data.size)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return neg(self)

    def __getitem__(self, key):
        return getitem(self, key)


@dataclass(eq=False)
class Record:
    op: str
    inputs: tuple
    output: Tensor
    backward: Callable


class Tape:
    """Ordered log of primitive operations, usable as a context manager."""

    def __init__(self):
        self.records: list[Record] = []
        self._outputs: set[int] = set()

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _tape_stack()
        if not stack or stack[-1] is not self:
            raise UsageError("tape stack corrupted: exiting a tape that is not active")
        stack.pop()

    def __len__(self) -> int:
        return len(self.records)

    def record(self, op: str, inputs: tuple, output: Tensor, backward: Callable) -> None:
        self.records.append(Record(op, inputs, output, backward))
        self._outputs.add(id(output))

    def holds(self, t: Tensor) -> bool:
        return id(t) in self._outputs

    def count(self, op: str) -> int:
        return len([r for r in self.records if r.op == op])


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype) if dtype is not None else x)


def _emit(op: str, inputs: tuple, data: np.ndarray, backward: Callable) -> Tensor:
    out = Tensor(data)
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.is_leaf = False
        tape.record(op, inputs, out, backward)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ConfigurationError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


def _binary(a, b):
    if isinstance(a, Tensor):
        return a, as_tensor(b, like=a)
    b = as_tensor(b)
    return as_tensor(a, like=b), b


# --------------------------------------------------------------------------
# primitives


def add(a, b) -> Tensor:
    a, b = _binary(a, b)
    _broadcast_shape("add", a, b)

    def bw(g, acc):
        acc(a, _unbroadcast(g, a.shape))
        acc(b, _unbroadcast(g, b.shape))

    return _emit("add", (a, b), a.data + b.data, bw)


def sub(a, b) -> Tensor:
    a, b = _binary(a, b)
    _broadcast_shape("sub", a, b)

    def bw(g, acc):
        acc(a, _unbroadcast(g, a.shape))
        if b.requires_grad:
            acc(b, -_unbroadcast(g, b.shape))

    return _emit("sub", (a, b), a.data - b.data, bw)


def mul(a, b) -> Tensor:
    a, b = _binary(a, b)
    _broadcast_shape("mul", a, b)

    def bw(g, acc):
        if a.requires_grad:
            acc(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            acc(b, _unbroadcast(g * a.data, b.shape))

    return _emit("mul", (a, b), a.data * b.data, bw)


def div(a, b) -> Tensor:
    a, b = _binary(a, b)
    _broadcast_shape("div", a, b)
    out = a.data / b.data

    def bw(g, acc):
        if a.requires_grad:
            acc(a, _unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            acc(b, _unbroadcast(-g * out / b.data, b.shape))

    return _emit("div", (a, b), out, bw)


def neg(a: Tensor) -> Tensor:
    return _emit("neg", (a,), -a.data, lambda g, acc: acc(a, -g))


def matmul(a, b) -> Tensor:
    """``a @ b`` for ``a`` of shape (..., k) and a 2-D ``b`` of shape (k, m)."""
    a, b = _binary(a, b)
    if b.ndim != 2 or a.ndim < 1 or a.shape[-1] != b.shape[0]:
        raise ConfigurationError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")

    def bw(g, acc):
        if a.requires_grad:
            acc(a, g @ b.data.T)
        if b.requires_grad:
            a2 = a.data.reshape(-1, a.shape[-1])
            acc(b, a2.T @ g.reshape(-1, b.shape[1]))

    return _emit("matmul", (a, b), a.data @ b.data, bw)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    if not tensors:
        raise ConfigurationError("concat: no operands")
    nd = tensors[0].ndim
    ax = axis % nd
    for t in tensors:
        if t.ndim != nd or any(t.shape[i] != tensors[0].shape[i] for i in range(nd) if i != ax):
            raise ConfigurationError(
                f"concat: shapes {[x.shape for x in tensors]} disagree off axis {axis}")
    bounds = np.cumsum([0] + [t.shape[ax] for t in tensors])

    def bw(g, acc):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                idx = [slice(None)] * nd
                idx[ax] = slice(lo, hi)
                acc(t, g[tuple(idx)])

    return _emit("concat", tensors, np.concatenate([t.data for t in tensors], axis=ax), bw)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    if not tensors or any(t.shape != tensors[0].shape for t in tensors):
        raise ConfigurationError(f"stack: operand shapes {[t.shape for t in tensors]} differ")
    out = np.stack([t.data for t in tensors], axis=axis)
    ax = axis % out.ndim

    def bw(g, acc):
        lead = (slice(None),) * ax
        for i, t in enumerate(tensors):
            if t.requires_grad:
                acc(t, g[lead + (i,)])

    return _emit("stack", tensors, out, bw)


def _is_basic(key) -> bool:
    parts = key if isinstance(key, tuple) else (key,)
    return all(isinstance(k, (slice, int, np.integer)) or k is Ellipsis or k is None for k in parts)


def getitem(a: Tensor, key) -> Tensor:
    """Slice or integer-array index; gradients scatter back (repeats add up)."""
    try:
        out = a.data[key]
    except IndexError as exc:
        raise ConfigurationError(f"slice: {exc} for shape {a.shape}") from None
    return _emit("slice", (a,), out, lambda g, acc: acc(a, g, key))


def reshape(a: Tensor, shape) -> Tensor:
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ConfigurationError(f"reshape: cannot reshape {a.shape} to {shape}") from None
    return _emit("reshape", (a,), out, lambda g, acc: acc(a, g.reshape(a.shape)))


def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g, acc):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        acc(a, np.broadcast_to(g, a.shape).copy())

    return _emit("sum", (a,), np.asarray(out), bw)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.data.size // max(np.asarray(out).size, 1)

    def bw(g, acc):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        acc(a, np.broadcast_to(g / count, a.shape).astype(a.dtype))

    return _emit("mean", (a,), np.asarray(out), bw)


def sigmoid(a: Tensor) -> Tensor:
    # tanh form is overflow-free and exact at 0
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _emit("sigmoid", (a,), out, lambda g, acc: acc(a, g * out * (1.0 - out)))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _emit("tanh", (a,), out, lambda g, acc: acc(a, g * (1.0 - out * out)))


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return _emit("sqrt", (a,), out, lambda g, acc: acc(a, g * 0.5 / out))


def square(a: Tensor) -> Tensor:
    return _emit("square", (a,), a.data * a.data, lambda g, acc: acc(a, 2.0 * g * a.data))


def log(a: Tensor) -> Tensor:
    return _emit("log", (a,), np.log(a.data), lambda g, acc: acc(a, g / a.data))


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    inside = (a.data >= lo) & (a.data <= hi)
    return _emit("clip", (a,), np.clip(a.data, lo, hi), lambda g, acc: acc(a, g * inside))


def min_pairwise_sq_distance(x: Tensor) -> Tensor:
    """Smallest squared Euclidean distance between distinct rows of ``x``.

    Coordinates are accumulated left to right so the value matches a plain
    double loop over row pairs bit for bit.
    """
    if x.ndim != 2 or x.shape[0] < 2:
        raise ConfigurationError(f"min_pairwise_sq_distance: need (rows>=2, dim), got {x.shape}")
    n_rows, dim = x.shape
    d = np.zeros((n_rows, n_rows), dtype=x.dtype)
    for k in range(dim):
        diff = x.data[:, None, k] - x.data[None, :, k]
        d += diff * diff
    iu, ju = np.triu_indices(n_rows, k=1)
    flat = d[iu, ju]
    best = int(np.argmin(flat))
    i, j = int(iu[best]), int(ju[best])

    def bw(g, acc):
        grad = np.zeros_like(x.data)
        delta = 2.0 * (x.data[i] - x.data[j]) * g
        grad[i] += delta
        grad[j] -= delta
        acc(x, grad)

    return _emit("min_pairwise_sq_distance", (x,), np.asarray(flat[best]), bw)


def gru_sequence(x: Tensor, W: Tensor, U: Tensor, b: Tensor, h0: Tensor,
                 reverse: bool = False) -> Tensor:
    """Whole GRU recurrence as one primitive with a hand-written BPTT.

    ``x`` (B, T, in), kernels in ``[update | reset | candidate]`` layout,
    ``h0`` (B, H).  Returns hidden states (B, T, H) aligned to input steps.
    """
    B, steps, n_in = x.shape
    H = U.shape[0]
    # time-major buffers keep every per-step slice contiguous
    xt = np.ascontiguousarray(x.data.transpose(1, 0, 2))
    proj = xt @ W.data + b.data
    Uzr, Uc = U.data[:, : 2 * H], U.data[:, 2 * H:]
    order = range(steps - 1, -1, -1) if reverse else range(steps)
    shape = (steps, B, H)
    hs, zs, rs, cs, prev, rh = (np.empty(shape, dtype=proj.dtype) for _ in range(6))
    h = h0.data.astype(proj.dtype, copy=False)
    for t in order:
        prev[t] = h
        zr = np.tanh(0.5 * (proj[t, :, : 2 * H] + h @ Uzr))
        zr += 1.0
        zr *= 0.5
        z, r = zr[:, :H], zr[:, H:]
        np.multiply(r, h, out=rh[t])
        c = np.tanh(proj[t, :, 2 * H:] + rh[t] @ Uc)
        h = h + z * (c - h)
        zs[t], rs[t], cs[t], hs[t] = z, r, c, h
    out = hs.transpose(1, 0, 2)

    def bw(g, acc):
        gt = g.transpose(1, 0, 2)
        dproj = np.empty_like(proj)
        dh = np.zeros((B, H), dtype=proj.dtype)
        for t in reversed(order):
            z, r, c, hp = zs[t], rs[t], cs[t], prev[t]
            dh = dh + gt[t]
            dzr = dproj[t, :, : 2 * H]
            dc = dproj[t, :, 2 * H:]
            np.multiply(dh * z, 1.0 - c * c, out=dc)
            np.multiply(dh * (c - hp), z * (1.0 - z), out=dzr[:, :H])
            drh = dc @ Uc.T
            np.multiply(drh * hp, r * (1.0 - r), out=dzr[:, H:])
            dh = dh * (1.0 - z) + drh * r + dzr @ Uzr.T
        flat = dproj.reshape(-1, 3 * H)
        if x.requires_grad:
            acc(x, (dproj @ W.data.T).transpose(1, 0, 2))
        if W.requires_grad:
            acc(W, xt.reshape(-1, n_in).T @ flat)
        if U.requires_grad:
            acc(U, np.concatenate([prev.reshape(-1, H).T @ flat[:, : 2 * H],
                                   rh.reshape(-1, H).T @ flat[:, 2 * H:]], axis=1))
        if b.requires_grad:
            acc(b, flat.sum(axis=0))
        if h0.requires_grad:
            acc(h0, dh)

    return _emit("gru_sequence", (x, W, U, b, h0), out, bw)


# --------------------------------------------------------------------------
# reverse pass


def backward(tape: Tape, loss: Tensor) -> dict:
    """Gradients of scalar ``loss`` for every leaf on ``tape`` needing one.

    Returns a dict keyed by the leaf :class:`Tensor` objects.
    """
    if not isinstance(loss, Tensor) or not tape.holds(loss):
        raise UsageError("backward: loss was not produced on this tape")
    if loss.data.size != 1:
        raise UsageError(f"backward: loss must be a scalar, got shape {loss.shape}")

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    owned: set[int] = set()
    leaves: dict[int, Tensor] = {}

    def acc(t: Tensor, g, key=None):
        if not t.requires_grad:
            return
        tid = id(t)
        if t.is_leaf:
            leaves[tid] = t
        buf = grads.get(tid)
        if key is None:
            grads[tid] = g if buf is None else buf + g
            owned.discard(tid)
            return
        if buf is None or tid not in owned:
            fresh = np.zeros(t.shape, dtype=t.dtype)
            if buf is not None:
                fresh += buf
            buf = grads[tid] = fresh
            owned.add(tid)
        if _is_basic(key):
            buf[key] += g
        else:
            np.add.at(buf, key, g)

    for rec in reversed(tape.records):
        g = grads.pop(id(rec.output), None)
        if g is None:
            continue
        rec.backward(g, acc)

    return {leaves[k]: v for k, v in grads.items() if k in leaves}
