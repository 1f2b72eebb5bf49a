"""Message encoding, gated exchange, aggregation and attention-conditioned acting.

All functions accept arbitrary leading batch axes. Within one task the shapes
are::

    obs         (..., N, E, D_e)   one entity matrix per agent
    messages    (..., N, D_m)
    scores/mask (..., N, N)        [sender, receiver]
    aggregated  (..., N, D_h)      one digest per receiver
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .autodiff import functional as F
from .autodiff.functional import ParameterError
from .autodiff.nn import LayerNorm, Linear, Module, glorot, param, zeros
from .autodiff.tensor import Tensor, as_tensor, concat, relu, stack, tanh, where


class ModelConfigError(ValueError):
    """Shapes or head counts that do not fit the parameter set."""


@dataclass(frozen=True)
class ModelConfig:
    feature_dim: int
    n_actions: int = 5
    max_agents: int = 3
    hidden: int = 64
    message_dim: int = 10
    ffn_dim: int = 64
    enc_blocks: int = 2
    enc_heads: int = 4
    policy_heads: int = 4
    pred_heads: int = 4
    pred_blocks: int = 1


def _mha_params(rng, d_q: int, d_kv: int, d_model: int, d_out: int) -> dict:
    return {
        "w_q": glorot(rng, d_q, d_model),
        "w_k": glorot(rng, d_kv, d_model),
        "w_v": glorot(rng, d_kv, d_model),
        "w_o": glorot(rng, d_model, d_out),
    }


class EncoderBlock(Module):
    """Pre-norm Transformer block without positional encoding."""

    def __init__(self, rng, dim: int, ffn_dim: int, heads: int):
        self.heads = heads
        self.ln1 = LayerNorm(dim)
        self.attn = _mha_params(rng, dim, dim, dim, dim)
        self.ln2 = LayerNorm(dim)
        self.ff1 = Linear(rng, dim, ffn_dim)
        self.ff2 = Linear(rng, ffn_dim, dim)

    def __call__(self, x: Tensor) -> Tensor:
        h = self.ln1(x)
        x = x + F.multi_head_attention(h, h, h, self.heads, self.attn)
        return x + self.ff2(relu(self.ff1(self.ln2(x))))


class MessageEncoder(Module):
    """Entity matrix -> message vector, shared by every agent and task."""

    def __init__(self, rng, cfg: ModelConfig):
        self.feature_dim = cfg.feature_dim
        self.embed = Linear(rng, cfg.feature_dim, cfg.hidden)
        self.blocks = [EncoderBlock(rng, cfg.hidden, cfg.ffn_dim, cfg.enc_heads)
                       for _ in range(cfg.enc_blocks)]
        self.ln_f = LayerNorm(cfg.hidden)
        self.out = Linear(rng, cfg.hidden, cfg.message_dim)

    def __call__(self, obs) -> Tensor:
        obs = as_tensor(obs)
        if obs.shape[-1] != self.feature_dim:
            raise ModelConfigError(
                f"observation feature width {obs.shape[-1]} != encoder input width {self.feature_dim}")
        x = self.embed(obs)
        for block in self.blocks:
            x = block(x)
        return self.out(F.mean_pool(self.ln_f(x), axis=-2))


class CommGate(Module):
    """Additive attention scorer ``v . tanh(W_q m_i + W_k m_j)``."""

    def __init__(self, rng, cfg: ModelConfig):
        self.v = param(rng.uniform(-1, 1, size=cfg.hidden) / np.sqrt(cfg.hidden))
        self.w_q = glorot(rng, cfg.message_dim, cfg.hidden)
        self.w_k = glorot(rng, cfg.message_dim, cfg.hidden)


class Aggregator(Module):
    """GRU cell run over the senders of one receiver."""

    def __init__(self, rng, cfg: ModelConfig):
        d_in, d_h = cfg.message_dim, cfg.hidden
        self.gru = {
            "w_x": glorot(rng, d_in, 3 * d_h),
            "w_h": glorot(rng, d_h, 3 * d_h),
            "b_x": zeros(3 * d_h),
            "b_h": zeros(3 * d_h),
        }
        self.hidden = d_h


class AttentionHead(Module):
    """Aggregated message attends over observation rows; an MLP reads out.

    Used with ``out_dim = n_actions`` as the policy and ``out_dim = 1`` as
    the critic. The read-out sees the attention output ``z`` alongside the
    aggregated message itself.
    """

    def __init__(self, rng, cfg: ModelConfig, out_dim: int, out_gain: float):
        self.heads = cfg.policy_heads
        self.attn = _mha_params(rng, cfg.hidden, cfg.feature_dim, cfg.hidden, cfg.hidden)
        self.fc = Linear(rng, 2 * cfg.hidden, cfg.hidden)
        self.out = Linear(rng, cfg.hidden, out_dim, gain=out_gain)

    def __call__(self, obs, m_bar, return_weights: bool = False):
        obs, m_bar = as_tensor(obs), as_tensor(m_bar)
        q = m_bar.reshape(*m_bar.shape[:-1], 1, m_bar.shape[-1])
        z, mu = F.multi_head_attention(q, obs, obs, self.heads, self.attn, return_weights=True)
        z = z.reshape(*z.shape[:-2], z.shape[-1])
        out = self.out(relu(self.fc(concat([z, m_bar], axis=-1))))
        if return_weights:
            return out, z, mu
        return out


class MCSModel(Module):
    """Every shared parameter set: encoder, gate, aggregator, policy, critic, predictor."""

    def __init__(self, cfg: ModelConfig, seed: int = 0, with_predictor: bool = True):
        from .predictor import Predictor

        rng = np.random.default_rng(seed)
        self.cfg = cfg
        self.encoder = MessageEncoder(rng, cfg)
        self.gate = CommGate(rng, cfg)
        self.aggregator = Aggregator(rng, cfg)
        self.policy = AttentionHead(rng, cfg, cfg.n_actions, out_gain=0.01)
        self.critic = AttentionHead(rng, cfg, 1, out_gain=1.0)
        self.predictor = Predictor(rng, cfg) if with_predictor else None

    def actor_parameters(self) -> list[Tensor]:
        mods = [self.encoder, self.gate, self.aggregator, self.policy]
        if self.predictor is not None:
            mods.append(self.predictor)
        return [p for m in mods for p in m.parameters()]

    def critic_parameters(self) -> list[Tensor]:
        return self.critic.parameters()


# ---------------------------------------------------------------------------
# pipeline stages


def encode_messages(obs, encoder: MessageEncoder) -> Tensor:
    return encoder(obs)


def draw_gate_noise(n_agents: int, rng: np.random.Generator, batch_shape=()) -> np.ndarray:
    """Gumbel draws for the {communicate, silent} pair of every ordered agent pair."""
    return F.sample_gumbel((*batch_shape, n_agents, n_agents, 2), rng)


def comm_logits(messages, gate: CommGate) -> Tensor:
    """Additive-attention score ``s[i, j]`` for sender ``i`` and receiver ``j``."""
    messages = as_tensor(messages)
    q = messages @ gate.w_q
    k = messages @ gate.w_k
    n, d = q.shape[-2], q.shape[-1]
    pair = q.reshape(*q.shape[:-1], 1, d) + k.reshape(*k.shape[:-2], 1, n, d)
    return (tanh(pair) * gate.v).sum(axis=-1)


def comm_scores(messages, gate: CommGate, temperature: float = 1.0,
                rng: Optional[np.random.Generator] = None,
                noise: Optional[np.ndarray] = None) -> Tensor:
    """Relaxed communicate-probability ``alpha[i, j]`` in [0, 1].

    Each score is the first component of a two-way Gumbel-Softmax over the
    logits ``(s, 0)``. Without ``rng`` or ``noise`` it is the noise-free
    tempered softmax.
    """
    messages = as_tensor(messages)
    if messages.shape[-2] < 2:
        raise ModelConfigError("communication needs at least two agents")
    s = comm_logits(messages, gate)
    pair = stack([s, Tensor._wrap(np.zeros(s.shape))], axis=-1)
    if noise is None and rng is not None:
        noise = F.sample_gumbel(pair.shape, rng)
    return F.gumbel_softmax(pair, temperature, noise=noise)[..., 0]


def build_mask(scores, threshold: float, open_all: bool = False, isolate: bool = False) -> Tensor:
    """Threshold scores into a communication mask with a unit diagonal.

    Off-diagonal entries keep their score when it exceeds ``threshold`` and
    are zero otherwise. ``open_all`` forces every entry to one (mask
    ablation); ``isolate`` zeroes the whole matrix including the diagonal.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ParameterError(f"threshold must lie in [0, 1], got {threshold}")
    scores = as_tensor(scores)
    n = scores.shape[-1]
    eye = np.eye(n, dtype=bool)
    if isolate:
        return Tensor._wrap(np.zeros(scores.shape))
    if open_all:
        return Tensor._wrap(np.ones(scores.shape))
    keep = (scores.data > threshold) & ~eye
    return where(keep, scores, 0.0) + eye.astype(np.float64)


def gate_messages(messages, mask) -> Tensor:
    """``gated[..., j, i, :] = mask[..., i, j] * messages[..., i, :]``."""
    messages, mask = as_tensor(messages), as_tensor(mask)
    c = mask.transpose(*range(mask.ndim - 2), mask.ndim - 1, mask.ndim - 2)
    c = c.reshape(*c.shape, 1)
    m = messages.reshape(*messages.shape[:-2], 1, *messages.shape[-2:])
    return c * m


def aggregate(received, aggregator: Aggregator) -> Tensor:
    """GRU over senders in ascending index from a zero state, then the mean
    of all hidden states.

    ``received`` is ``(..., N_senders, D_m)`` for one receiver (leading axes
    may index receivers and batch).
    """
    received = as_tensor(received)
    n = received.shape[-2]
    h = Tensor._wrap(np.zeros((*received.shape[:-2], aggregator.hidden)))
    total = None
    for ell in range(n):
        h = F.gru_cell(received[..., ell, :], h, aggregator.gru)
        total = h if total is None else total + h
    return total * (1.0 / n)


def action_logits(obs, m_bar, policy: AttentionHead, n_valid: Optional[int] = None,
                  return_weights: bool = False):
    out = policy(obs, m_bar, return_weights=return_weights)
    logits = out[0] if return_weights else out
    if n_valid is not None and n_valid < logits.shape[-1]:
        invalid = np.arange(logits.shape[-1]) >= n_valid
        logits = F.masked_fill(logits, invalid, -1e30)
    if return_weights:
        return logits, out[1], out[2]
    return logits


def attend_and_act(obs, m_bar, policy: AttentionHead, rng: Optional[np.random.Generator] = None,
                   n_valid: Optional[int] = None):
    """Sample (or, without ``rng``, pick greedily) an action per agent.

    Returns ``(actions, log_prob, z)``; ``log_prob`` is a tensor so it can
    carry gradients.
    """
    logits, z, _ = action_logits(obs, m_bar, policy, n_valid, return_weights=True)
    logp = F.log_softmax(logits, axis=-1)
    if rng is None:
        actions = np.argmax(logp.data, axis=-1)
    else:
        actions = sample_categorical(np.exp(logp.data), rng)
    return actions, F.gather_last(logp, actions), z


def sample_categorical(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Inverse-CDF draw along the last axis."""
    cdf = np.cumsum(probs, axis=-1)
    u = rng.random(probs.shape[:-1] + (1,)) * cdf[..., -1:]
    return np.minimum((u > cdf).sum(axis=-1), probs.shape[-1] - 1)


@dataclass
class CommResult:
    messages: Tensor
    scores: Tensor
    mask: Tensor
    aggregated: Tensor
    noise: Optional[np.ndarray]


def communicate(obs, model: MCSModel, threshold: float, temperature: float = 1.0,
                rng: Optional[np.random.Generator] = None, noise: Optional[np.ndarray] = None,
                open_all: bool = False, isolate: bool = False) -> CommResult:
    """encode -> score -> mask -> gate -> aggregate for one batch of one task."""
    messages = encode_messages(obs, model.encoder)
    n = messages.shape[-2]
    if noise is None and rng is not None:
        noise = draw_gate_noise(n, rng, messages.shape[:-2])
    scores = comm_scores(messages, model.gate, temperature, noise=noise)
    mask = build_mask(scores, threshold, open_all=open_all, isolate=isolate)
    received = gate_messages(messages, mask)
    return CommResult(messages, scores, mask, aggregate(received, model.aggregator), noise)
