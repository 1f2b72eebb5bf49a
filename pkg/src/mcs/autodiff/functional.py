"""Differentiable building blocks used by the communication networks."""
from __future__ import annotations

from typing import Mapping, Optional

import numpy as np

from .tensor import (
    DimensionError,
    Tensor,
    _record,
    as_tensor,
    concat,
    matmul,
    mul,
    reshape,
    sigmoid,
    swapaxes,
    tanh,
)


class ParameterError(ValueError):
    """Raised for invalid hyper-parameters (temperature, heads, thresholds)."""


def softmax(x, axis: int = -1) -> Tensor:
    """Max-shifted softmax along ``axis``."""
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def fn(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _record(out, (x,), fn)


def log_softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse

    def fn(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _record(out, (x,), fn)


def sample_gumbel(shape, rng: np.random.Generator) -> np.ndarray:
    """Standard Gumbel draws via inverse CDF."""
    u = rng.random(shape)
    # u == 0 has probability ~2^-53 but would give -log(0)
    u = np.clip(u, np.finfo(np.float64).tiny, 1.0)
    return -np.log(-np.log(u))


def gumbel_softmax(logits, temperature: float = 1.0, rng: Optional[np.random.Generator] = None,
                   noise: Optional[np.ndarray] = None, axis: int = -1) -> Tensor:
    """Relaxed categorical sample ``softmax((logits + g) / temperature)``.

    Pass ``noise`` to replay a previous draw; with neither ``rng`` nor
    ``noise`` the result is the noise-free tempered softmax.
    """
    if not temperature > 0:
        raise ParameterError(f"temperature must be positive, got {temperature}")
    logits = as_tensor(logits)
    if noise is None and rng is not None:
        noise = sample_gumbel(logits.shape, rng)
    z = logits if noise is None else logits + noise
    if temperature != 1.0:
        z = z * (1.0 / temperature)
    return softmax(z, axis=axis)


def linear(x, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    out = matmul(x, weight)
    return out if bias is None else out + bias


def layer_norm(x, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then scale and shift."""
    x = as_tensor(x)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    normed = _record(xhat, (x,), lambda g: (
        inv * (g - g.mean(axis=-1, keepdims=True) - xhat * (g * xhat).mean(axis=-1, keepdims=True)),))
    return normed * gain + bias


def mean_pool(x, axis: int = -2) -> Tensor:
    """Mean over the entity axis, summed in sorted order.

    Sorting each column before summation makes the result bit-identical under
    any permutation of the entity rows.
    """
    x = as_tensor(x)
    n = x.shape[axis]
    if n < 1:
        raise ParameterError("mean_pool over an empty entity axis")
    out = np.sort(x.data, axis=axis).sum(axis=axis) / n
    src = x.shape

    def fn(g):
        return (np.broadcast_to(np.expand_dims(g, axis) / n, src),)

    return _record(out, (x,), fn)


GRU_KEYS = ("w_x", "w_h", "b_x", "b_h")


def gru_cell(x, h_prev, params: Mapping[str, Tensor]) -> Tensor:
    """One gated recurrent update.

    ``w_x`` is ``D_in x 3*D_h`` and ``w_h`` is ``D_h x 3*D_h``; the three
    column blocks are the reset gate, update gate and candidate, in that
    order. Output is ``(1 - z) * n + z * h_prev``.
    """
    x, h_prev = as_tensor(x), as_tensor(h_prev)
    w_x, w_h, b_x, b_h = (params[k] for k in GRU_KEYS)
    d_h = w_h.shape[0]
    if w_x.shape[0] != x.shape[-1]:
        raise DimensionError(f"gru input width {x.shape[-1]} != {w_x.shape[0]}")
    if h_prev.shape[-1] != d_h or w_h.shape[1] != 3 * d_h or w_x.shape[1] != 3 * d_h:
        raise DimensionError(f"gru hidden width mismatch: h {h_prev.shape}, w_h {w_h.shape}")
    gx = matmul(x, w_x) + b_x
    gh = matmul(h_prev, w_h) + b_h
    r = sigmoid(gx[..., :d_h] + gh[..., :d_h])
    z = sigmoid(gx[..., d_h:2 * d_h] + gh[..., d_h:2 * d_h])
    n = tanh(gx[..., 2 * d_h:] + r * gh[..., 2 * d_h:])
    return (1.0 - z) * n + z * h_prev


MHA_KEYS = ("w_q", "w_k", "w_v", "w_o")


def split_heads(x: Tensor, heads: int) -> Tensor:
    """``(..., L, D) -> (..., heads, L, D/heads)``"""
    *lead, length, dim = x.shape
    x = reshape(x, (*lead, length, heads, dim // heads))
    return swapaxes(x, -2, -3)


def merge_heads(x: Tensor) -> Tensor:
    *lead, heads, length, d_head = x.shape
    x = swapaxes(x, -2, -3)
    return reshape(x, (*lead, length, heads * d_head))


def attention_weights(q, k, heads: int, params: Mapping[str, Tensor],
                      key_mask: Optional[np.ndarray] = None) -> Tensor:
    """Per-head scaled dot-product weights, shape ``(..., heads, L_q, L_k)``."""
    dim = params["w_q"].shape[1]
    if heads < 1 or dim % heads:
        raise ParameterError(f"model width {dim} not divisible by {heads} heads")
    qh = split_heads(matmul(q, params["w_q"]), heads)
    kh = split_heads(matmul(k, params["w_k"]), heads)
    scores = matmul(qh, swapaxes(kh, -1, -2)) * (1.0 / np.sqrt(dim // heads))
    if key_mask is not None:
        scores = masked_fill(scores, ~np.asarray(key_mask, dtype=bool)[..., None, None, :], -1e30)
    return softmax(scores, axis=-1)


def multi_head_attention(q, k, v, heads: int, params: Mapping[str, Tensor],
                         key_mask: Optional[np.ndarray] = None,
                         return_weights: bool = False):
    """Multi-head attention with input projections and output projection.

    Inputs are ``(..., L_q, D_q)``, ``(..., L_k, D_k)``, ``(..., L_k, D_v)``;
    ``w_q``/``w_k``/``w_v`` project to the model width, which must divide
    evenly by ``heads``, and ``w_o`` maps the concatenated heads out.
    """
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    mu = attention_weights(q, k, heads, params, key_mask)
    vh = split_heads(matmul(v, params["w_v"]), heads)
    out = matmul(merge_heads(matmul(mu, vh)), params["w_o"])
    return (out, mu) if return_weights else out


def masked_fill(x, mask: np.ndarray, value: float) -> Tensor:
    """Replace entries where ``mask`` is true by a constant (no gradient there)."""
    x = as_tensor(x)
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
    keep = ~mask
    return _record(np.where(mask, value, x.data), (x,), lambda g: (g * keep,))


def entropy_from_logits(logits) -> Tensor:
    logp = log_softmax(logits, axis=-1)
    return -(mul(softmax(logits, axis=-1), logp)).sum(axis=-1)


def gather_last(x, index: np.ndarray) -> Tensor:
    """``x[..., index]`` picking one entry per leading position."""
    x = as_tensor(x)
    lead = np.indices(index.shape, sparse=True)
    return x[(*lead, np.asarray(index, dtype=np.int64))]


__all__ = [
    "ParameterError", "softmax", "log_softmax", "sample_gumbel", "gumbel_softmax",
    "linear", "layer_norm", "mean_pool", "gru_cell", "multi_head_attention",
    "attention_weights", "masked_fill", "entropy_from_logits", "gather_last",
    "split_heads", "merge_heads", "concat",
]
