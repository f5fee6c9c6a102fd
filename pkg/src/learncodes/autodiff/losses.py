from __future__ import annotations

import numpy as np

from ..errors import InputError
from . import tensor as T
from .tensor import Tensor, _emit

BCE_CLIP = 1e-7


def bce_loss(probs: Tensor, targets, eps: float = BCE_CLIP) -> Tensor:
    """Mean binary cross-entropy with probabilities clamped to [eps, 1-eps].

    Clamped entries receive zero gradient.
    """
    y = np.asarray(targets.data if isinstance(targets, Tensor) else targets)
    if y.shape != probs.shape:
        raise InputError(f"bce_loss: shapes {probs.shape} and {y.shape} differ")
    if not np.all((y == 0) | (y == 1)):
        raise InputError("bce_loss: targets must be 0 or 1")
    y = y.astype(probs.dtype)
    p = np.clip(probs.data, eps, 1.0 - eps)
    inside = (probs.data >= eps) & (probs.data <= 1.0 - eps)
    value = -np.mean(y * np.log(p) + (1.0 - y) * np.log1p(-p))
    n = p.size

    def bw(g, acc):
        acc(probs, g * inside * (p - y) / (p * (1.0 - p)) / n)

    return _emit("bce", (probs,), np.asarray(value, dtype=probs.dtype), bw)


def mse_loss(pred: Tensor, targets) -> Tensor:
    y = T.as_tensor(targets, like=pred)
    if y.shape != pred.shape:
        raise InputError(f"mse_loss: shapes {pred.shape} and {y.shape} differ")
    return T.mean(T.square(pred - y))
