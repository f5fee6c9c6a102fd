"""Central finite-difference oracle for tape gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tape, Tensor, backward


def numeric_grad(fn: Callable[..., Tensor], arrays: Sequence[np.ndarray], step: float = 1e-5):
    """Central differences of scalar ``fn(*tensors)`` w.r.t. each array."""
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    out = []
    for a in arrays:
        g = np.zeros_like(a)
        flat = a.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = float(fn(*[Tensor(x) for x in arrays]).data)
            flat[i] = orig - step
            lo = float(fn(*[Tensor(x) for x in arrays]).data)
            flat[i] = orig
            gflat[i] = (hi - lo) / (2.0 * step)
        out.append(g)
    return out


def analytic_grad(fn: Callable[..., Tensor], arrays: Sequence[np.ndarray]):
    leaves = [Tensor(np.array(a, dtype=np.float64), requires_grad=True) for a in arrays]
    with Tape() as tape:
        loss = fn(*leaves)
    grads = backward(tape, loss)
    return [grads.get(t, np.zeros_like(t.data)) for t in leaves]


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """``|a-b| / max(|a|, |b|)`` in Euclidean norm; 0 when both vanish."""
    denom = max(np.linalg.norm(a), np.linalg.norm(b))
    if denom < 1e-12:
        return float(np.linalg.norm(a - b))
    return float(np.linalg.norm(a - b) / denom)


def check_gradients(fn: Callable[..., Tensor], arrays: Sequence[np.ndarray],
                    step: float = 1e-5) -> float:
    """Worst relative error between tape and finite-difference gradients."""
    ana = analytic_grad(fn, arrays)
    num = numeric_grad(fn, arrays, step)
    return max(relative_error(a, n) for a, n in zip(ana, num))
