"""Training-only action predictor and the Barber-Agakov bound utilities.

The predictor is a one-block Transformer decoder. Each agent's message is a
query; the decoder first lets queries attend to each other, then
cross-attends to "initialised actions" (a learned null-action embedding plus a
per-agent position embedding), and finally emits a distribution over the
zero-padded action space of width ``A_max``.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .autodiff import functional as F
from .autodiff.nn import LayerNorm, Linear, Module, param
from .autodiff.tensor import Tensor, as_tensor, relu


class PredictorError(ValueError):
    pass


class DecoderBlock(Module):
    def __init__(self, rng, dim: int, ffn_dim: int, heads: int):
        from .comm import _mha_params

        self.heads = heads
        self.ln1 = LayerNorm(dim)
        self.self_attn = _mha_params(rng, dim, dim, dim, dim)
        self.ln2 = LayerNorm(dim)
        self.cross_attn = _mha_params(rng, dim, dim, dim, dim)
        self.ln3 = LayerNorm(dim)
        self.ff1 = Linear(rng, dim, ffn_dim)
        self.ff2 = Linear(rng, ffn_dim, dim)

    def __call__(self, x: Tensor, memory: Tensor) -> Tensor:
        h = self.ln1(x)
        x = x + F.multi_head_attention(h, h, h, self.heads, self.self_attn)
        x = x + F.multi_head_attention(self.ln2(x), memory, memory, self.heads, self.cross_attn)
        return x + self.ff2(relu(self.ff1(self.ln3(x))))


class Predictor(Module):
    def __init__(self, rng, cfg):
        d = cfg.hidden
        self.n_actions = cfg.n_actions
        self.max_agents = cfg.max_agents
        self.embed = Linear(rng, cfg.message_dim, d)
        self.null_action = param(rng.normal(0.0, 0.1, size=d))
        self.position = param(rng.normal(0.0, 0.1, size=(cfg.max_agents, d)))
        self.blocks = [DecoderBlock(rng, d, cfg.ffn_dim, cfg.pred_heads) for _ in range(cfg.pred_blocks)]
        self.ln_f = LayerNorm(d)
        self.head = Linear(rng, d, cfg.n_actions)

    def logits(self, messages, n_valid: int | None = None) -> Tensor:
        messages = as_tensor(messages)
        n = messages.shape[-2]
        if n > self.max_agents:
            raise PredictorError(f"{n} agents exceed predictor capacity {self.max_agents}")
        if n_valid is not None and n_valid > self.n_actions:
            raise PredictorError(f"task action width {n_valid} exceeds padded width {self.n_actions}")
        x = self.embed(messages)
        memory = self.null_action + self.position[:n]
        for block in self.blocks:
            x = block(x, memory)
        out = self.head(self.ln_f(x))
        if n_valid is not None and n_valid < self.n_actions:
            out = F.masked_fill(out, np.arange(self.n_actions) >= n_valid, -1e30)
        return out


def predict_action_dist(messages, predictor: Predictor, n_valid: int | None = None) -> Tensor:
    """Per-agent categorical over the padded action space; padded slots get 0."""
    return F.softmax(predictor.logits(messages, n_valid), axis=-1)


def predict_log_probs(messages, predictor: Predictor, n_valid: int | None = None) -> Tensor:
    return F.log_softmax(predictor.logits(messages, n_valid), axis=-1)


def joint_log_likelihood(log_probs: Tensor, actions: np.ndarray) -> Tensor:
    """Sum over agents of ``log q(a_i | m)``, shape ``(...,)``."""
    return F.gather_last(log_probs, np.asarray(actions)).sum(axis=-1)


def predictor_loss(batches: Sequence[tuple], predictor: Predictor) -> Tensor:
    """Negative mean joint log-likelihood, averaged over tasks then samples.

    ``batches`` holds one ``(actions, messages, n_valid)`` triple per task
    with ``actions`` of shape ``(B, N)`` and ``messages`` ``(B, N, D_m)``.
    """
    if not batches:
        raise PredictorError("empty batch")
    total = None
    for actions, messages, n_valid in batches:
        actions = np.asarray(actions)
        if actions.size == 0:
            raise PredictorError("empty batch")
        if n_valid is not None and actions.max() >= n_valid:
            raise PredictorError(f"action index {actions.max()} outside task width {n_valid}")
        ll = joint_log_likelihood(predict_log_probs(messages, predictor, n_valid), actions).mean()
        total = ll if total is None else total + ll
    return -total * (1.0 / len(batches))


# ---------------------------------------------------------------------------
# exact bound check on enumerable distributions


def _check_joint(joint: np.ndarray) -> np.ndarray:
    joint = np.asarray(joint, dtype=np.float64)
    if joint.ndim != 2 or (joint < 0).any() or not np.isclose(joint.sum(), 1.0, atol=1e-12, rtol=0):
        raise PredictorError("joint must be a non-negative 2-D table summing to 1")
    return joint


def mutual_information(joint) -> float:
    """Exact ``I(A; M)`` in nats for a table ``joint[a, m]``."""
    joint = _check_joint(joint)
    pa = joint.sum(axis=1, keepdims=True)
    pm = joint.sum(axis=0, keepdims=True)
    nz = joint > 0
    return float(np.sum(joint[nz] * np.log(joint[nz] / (pa * pm)[nz])))


def entropy(p) -> float:
    p = np.asarray(p, dtype=np.float64).ravel()
    p = p[p > 0]
    return float(-np.sum(p * np.log(p)))


def mi_bound_check(joint, q) -> tuple[float, float]:
    """Return ``(exact MI, E_p[log q(a|m)] + H(A))``.

    ``q[a, m]`` is a conditional: each column sums to one. Terms with
    ``p(a, m) = 0`` contribute nothing regardless of ``q``.
    """
    joint = _check_joint(joint)
    q = np.asarray(q, dtype=np.float64)
    if q.shape != joint.shape or not np.allclose(q.sum(axis=0), 1.0, atol=1e-12):
        raise PredictorError("q must have the joint's shape with columns summing to 1")
    nz = joint > 0
    if (q[nz] <= 0).any():
        return mutual_information(joint), -np.inf
    expected_log_q = float(np.sum(joint[nz] * np.log(q[nz])))
    return mutual_information(joint), expected_log_q + entropy(joint.sum(axis=1))


def true_conditional(joint) -> np.ndarray:
    """``p(a | m)`` with uniform columns where ``p(m) = 0``."""
    joint = _check_joint(joint)
    pm = joint.sum(axis=0, keepdims=True)
    uniform = np.full_like(joint, 1.0 / joint.shape[0])
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(pm > 0, joint / pm, uniform)
