"""GRU / Bi-GRU layers and dense layers built from tape primitives.

Gate layout inside every kernel is ``[update | reset | candidate]``:

    z = sigmoid(x W_z + h U_z + b_z)
    r = sigmoid(x W_r + h U_r + b_r)
    c = tanh(x W_c + (r * h) U_c + b_c)
    h' = (1 - z) * h + z * c
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigurationError
from . import tensor as T
from .tensor import Tensor


@dataclass
class GruLayerParams:
    """Kernels of one GRU direction: W (in, 3H), U (H, 3H), b (3H,)."""

    W: Tensor
    U: Tensor
    b: Tensor

    @property
    def units(self) -> int:
        return self.U.shape[0]

    @property
    def in_width(self) -> int:
        return self.W.shape[0]

    def check(self) -> None:
        h = self.units
        if self.U.shape != (h, 3 * h) or self.W.shape[1:] != (3 * h,) or self.b.shape != (3 * h,):
            raise ConfigurationError(
                f"GRU params: W{self.W.shape} U{self.U.shape} b{self.b.shape} inconsistent")


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def orthogonal(rng: np.random.Generator, n: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


def init_gru(rng: np.random.Generator, in_width: int, units: int, dtype=np.float32) -> dict:
    """Fresh arrays ``{"W", "U", "b"}`` for one GRU direction."""
    W = np.concatenate([glorot_uniform(rng, in_width, units) for _ in range(3)], axis=1)
    U = np.concatenate([orthogonal(rng, units) for _ in range(3)], axis=1)
    return {"W": W.astype(dtype), "U": U.astype(dtype), "b": np.zeros(3 * units, dtype=dtype)}


def init_dense(rng: np.random.Generator, in_width: int, out_width: int, dtype=np.float32) -> dict:
    return {"W": glorot_uniform(rng, in_width, out_width).astype(dtype),
            "b": np.zeros(out_width, dtype=dtype)}


def gru_cell(p: GruLayerParams, x_t: Tensor, h: Tensor) -> Tensor:
    """Single GRU step for inputs of shape (B, in)."""
    out, _ = gru_forward(p, T.reshape(x_t, (x_t.shape[0], 1, x_t.shape[1])), h0=h)
    return out[:, 0]


def gru_forward(p: GruLayerParams, inputs: Tensor, h0: Tensor | None = None,
                reverse: bool = False, fused: bool = True):
    """Run a GRU over ``inputs`` of shape (B, T, in) or (T, in).

    Returns ``(outputs, h_last)`` with outputs aligned to input positions;
    with ``reverse`` the recurrence runs from the last step to the first.
    ``fused=False`` composes the recurrence from elementary primitives (slow
    reference path); the default records a single ``gru_sequence`` op.
    """
    p.check()
    squeeze = inputs.ndim == 2
    if squeeze:
        inputs = T.reshape(inputs, (1,) + inputs.shape)
    if inputs.ndim != 3 or inputs.shape[-1] != p.in_width:
        raise ConfigurationError(
            f"gru_forward: input shape {inputs.shape} does not match input width {p.in_width}")
    batch, steps, _ = inputs.shape
    if steps < 1:
        raise ConfigurationError("gru_forward: need at least one time step")
    H = p.units
    h = h0 if h0 is not None else Tensor(np.zeros((batch, H), dtype=inputs.dtype))

    if fused:
        out = T.gru_sequence(inputs, p.W, p.U, p.b, h, reverse=reverse)
        h = out[:, 0] if reverse else out[:, steps - 1]
        if squeeze:
            out = out[0]
        return out, h

    proj = T.matmul(inputs, p.W) + p.b
    proj_zr = proj[:, :, : 2 * H]
    proj_c = proj[:, :, 2 * H:]
    U_zr = p.U[:, : 2 * H]
    U_c = p.U[:, 2 * H:]
    outs = [None] * steps
    order = range(steps - 1, -1, -1) if reverse else range(steps)
    for t in order:
        zr = T.sigmoid(proj_zr[:, t] + T.matmul(h, U_zr))
        z = zr[:, :H]
        r = zr[:, H:]
        cand = T.tanh(proj_c[:, t] + T.matmul(r * h, U_c))
        h = h + z * (cand - h)
        outs[t] = h
    out = T.stack(outs, axis=1)
    if squeeze:
        out = out[0]
    return out, h


def bigru_forward(fwd: GruLayerParams, bwd: GruLayerParams, inputs: Tensor) -> Tensor:
    """Forward and backward GRU concatenated per step: (B, T, 2H)."""
    if fwd.units != bwd.units:
        raise ConfigurationError(
            f"bigru_forward: direction widths differ ({fwd.units} vs {bwd.units})")
    a, _ = gru_forward(fwd, inputs)
    b, _ = gru_forward(bwd, inputs, reverse=True)
    return T.concat([a, b], axis=-1)


def dense(x: Tensor, W: Tensor, b: Tensor) -> Tensor:
    return T.matmul(x, W) + b
