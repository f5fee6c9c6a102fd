"""Numpy tensors with reverse-mode autodiff, GRU layers, losses and Adam."""

from .gradcheck import check_gradients, numeric_grad, relative_error
from .losses import BCE_CLIP, bce_loss, mse_loss
from .nn import (
    GruLayerParams,
    bigru_forward,
    dense,
    gru_cell,
    gru_forward,
    init_dense,
    init_gru,
)
from .optim import AdamState, adam_step
from .tensor import (
    Tape,
    Tensor,
    active_tape,
    add,
    backward,
    clip,
    concat,
    div,
    getitem,
    gru_sequence,
    log,
    matmul,
    mean,
    min_pairwise_sq_distance,
    mul,
    neg,
    reshape,
    sigmoid,
    sqrt,
    square,
    stack,
    sub,
    tanh,
)
from .tensor import sum as tsum

__all__ = [
    "AdamState", "BCE_CLIP", "GruLayerParams", "Tape", "Tensor", "active_tape", "adam_step",
    "add", "backward", "bce_loss", "bigru_forward", "check_gradients", "clip", "concat",
    "dense", "div", "getitem", "gru_cell", "gru_forward", "gru_sequence", "init_dense",
    "init_gru", "log", "matmul", "mean", "min_pairwise_sq_distance", "mse_loss", "mul", "neg",
    "numeric_grad",
    "relative_error", "reshape", "sigmoid", "sqrt", "square", "stack", "sub", "tanh", "tsum",
]
