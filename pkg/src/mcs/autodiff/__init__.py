"""Minimal reverse-mode tensor engine (float64, numpy-backed)."""
from .functional import (
    ParameterError,
    entropy_from_logits,
    gather_last,
    gru_cell,
    gumbel_softmax,
    layer_norm,
    linear,
    log_softmax,
    masked_fill,
    mean_pool,
    multi_head_attention,
    sample_gumbel,
    softmax,
)
from .nn import Linear, LayerNorm, Module
from .optim import Adam, clip_grad_norm, global_grad_norm
from .tensor import (
    DimensionError,
    NonFiniteError,
    Tape,
    TapeError,
    Tensor,
    backward,
    clip,
    concat,
    exp,
    log,
    matmul,
    minimum,
    relu,
    reshape,
    sigmoid,
    stack,
    tanh,
    where,
)

__all__ = [
    "Tensor", "Tape", "backward", "DimensionError", "NonFiniteError", "TapeError",
    "ParameterError", "matmul", "softmax", "log_softmax", "gumbel_softmax", "sample_gumbel",
    "gru_cell", "mean_pool", "multi_head_attention", "layer_norm", "linear", "masked_fill",
    "entropy_from_logits", "gather_last", "concat", "stack", "reshape", "exp", "log",
    "tanh", "sigmoid", "relu", "clip", "minimum", "where",
    "Module", "Linear", "LayerNorm", "Adam", "clip_grad_norm", "global_grad_norm",
]
