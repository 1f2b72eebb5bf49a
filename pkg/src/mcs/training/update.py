"""Clipped-surrogate policy update with critic regression and predictor loss."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..autodiff import functional as F
from ..autodiff.optim import Adam, clip_grad_norm
from ..autodiff.tensor import NonFiniteError, Tape, Tensor, backward, clip, exp, minimum
from ..comm import MCSModel, action_logits, communicate
from ..predictor import joint_log_likelihood, predict_log_probs
from .rollout import RolloutBuffer, compute_advantages, normalize


class TrainingError(RuntimeError):
    """Raised when an update produces a non-finite loss; carries diagnostics."""


@dataclass
class Batch:
    """One task's slice of transitions, flattened over time and episodes."""

    obs: np.ndarray         # (B, N, E, D_e)
    gate_noise: np.ndarray  # (B, N, N, 2)
    actions: np.ndarray     # (B, N)
    old_log_probs: np.ndarray
    advantages: np.ndarray  # (B, N)
    returns: np.ndarray     # (B, N)
    n_valid: Optional[int] = None


@dataclass
class LossTerms:
    total: Tensor
    policy: Tensor
    value: Tensor
    entropy: Tensor
    pred: Optional[Tensor]


def task_loss(model: MCSModel, batch: Batch, threshold: float, tau: float, clip_param: float,
              value_coef: float, entropy_coef: float, beta: float, no_mask: bool = False) -> LossTerms:
    """Combined objective for one task, averaged over samples and agents.

    Messages, scores and masks are recomputed from the stored observations
    with the stored Gumbel noise, so every loss term reaches the encoder.
    """
    comm = communicate(batch.obs, model, threshold, tau, noise=batch.gate_noise, open_all=no_mask)
    logits = action_logits(batch.obs, comm.aggregated, model.policy, batch.n_valid)
    logp = F.gather_last(F.log_softmax(logits, axis=-1), batch.actions)
    ratio = exp(logp - batch.old_log_probs)
    adv = batch.advantages
    surrogate = minimum(ratio * adv, clip(ratio, 1.0 - clip_param, 1.0 + clip_param) * adv)
    policy = -surrogate.mean()
    ent = F.entropy_from_logits(logits).mean()
    values = model.critic(batch.obs, comm.aggregated)
    err = values.reshape(*values.shape[:-1]) - batch.returns
    value = (err * err).mean()
    total = policy + value * value_coef - ent * entropy_coef
    pred = None
    if beta > 0:
        if model.predictor is None:
            raise TrainingError("beta > 0 but the model has no predictor")
        ll = joint_log_likelihood(predict_log_probs(comm.messages, model.predictor, batch.n_valid),
                                  batch.actions)
        pred = -ll.mean()
        total = total + pred * beta
    return LossTerms(total, policy, value, ent, pred)


def combined_loss(model: MCSModel, batches: Sequence[Batch], cfg) -> LossTerms:
    """Equal-weight mean of the per-task objectives."""
    terms = [task_loss(model, b, cfg.alpha_hat, cfg.tau, cfg.clip_param, cfg.value_coef,
                       cfg.entropy_coef, cfg.effective_beta, cfg.no_mask) for b in batches]
    k = 1.0 / len(terms)

    def mean_of(name):
        parts = [getattr(t, name) for t in terms]
        if parts[0] is None:
            return None
        out = parts[0]
        for p in parts[1:]:
            out = out + p
        return out * k

    return LossTerms(*(mean_of(n) for n in ("total", "policy", "value", "entropy", "pred")))


class ValueNorm:
    """Running mean and variance of value targets.

    The critic regresses normalised returns; stored critic outputs are mapped
    back to return scale before advantages are computed. Statistics are a
    debiased exponential average with a very slow decay, so in practice a
    near-uniform average over every round seen so far.
    """

    def __init__(self, decay: float = 0.99999, eps: float = 1e-5, min_var: float = 1e-2):
        self.decay, self.eps, self.min_var = decay, eps, min_var
        self.mean_acc = 0.0
        self.sq_acc = 0.0
        self.debias = 0.0

    def stats(self) -> tuple[float, float]:
        d = max(self.debias, self.eps)
        mean = self.mean_acc / d
        var = max(self.sq_acc / d - mean * mean, self.min_var)
        return mean, float(np.sqrt(var))

    def update(self, x: np.ndarray) -> None:
        w = self.decay
        self.mean_acc = w * self.mean_acc + (1 - w) * float(np.mean(x))
        self.sq_acc = w * self.sq_acc + (1 - w) * float(np.mean(np.square(x)))
        self.debias = w * self.debias + (1 - w)

    def normalize(self, x: np.ndarray) -> np.ndarray:
        mean, std = self.stats()
        return (x - mean) / std

    def denormalize(self, x: np.ndarray) -> np.ndarray:
        mean, std = self.stats()
        return x * std + mean

    def state_dict(self) -> dict:
        return {"mean_acc": self.mean_acc, "sq_acc": self.sq_acc, "debias": self.debias}


def prepare(buffers: Sequence[RolloutBuffer], gamma: float, lam: float,
            value_norm: Optional[ValueNorm] = None) -> None:
    """Fill advantages (normalised per task) and value targets in place.

    With ``value_norm`` the stored values are read as normalised critic
    outputs, the statistics absorb this round's returns, and the targets are
    written in normalised units.
    """
    raw = []
    for buf in buffers:
        values, last = buf.values, buf.last_values
        if value_norm is not None:
            values, last = value_norm.denormalize(values), value_norm.denormalize(last)
        adv, ret = compute_advantages(buf.rewards, values, buf.dones, last, gamma, lam)
        buf.advantages = normalize(adv)
        raw.append(ret)
    if value_norm is not None:
        value_norm.update(np.concatenate([r.ravel() for r in raw]))
        raw = [value_norm.normalize(r) for r in raw]
    for buf, ret in zip(buffers, raw):
        buf.returns = ret


def minibatch(buf: RolloutBuffer, idx: np.ndarray) -> Batch:
    return Batch(obs=buf.flat("obs")[idx], gate_noise=buf.flat("gate_noise")[idx],
                 actions=buf.flat("actions")[idx], old_log_probs=buf.flat("log_probs")[idx],
                 advantages=buf.flat("advantages")[idx], returns=buf.flat("returns")[idx],
                 n_valid=buf.n_valid_actions)


def make_optimizer(model: MCSModel, cfg) -> Adam:
    return Adam([(model.actor_parameters(), cfg.lr), (model.critic_parameters(), cfg.critic_lr)],
                eps=cfg.opti_eps)


def gradient_step(model: MCSModel, optimizer: Adam, batches: Sequence[Batch], cfg) -> dict:
    optimizer.zero_grad()
    with Tape() as tape:
        terms = combined_loss(model, batches, cfg)
    if not np.isfinite(terms.total.data).all():
        raise TrainingError(_diagnose(terms, model))
    try:
        backward(terms.total, tape)
    except NonFiniteError as exc:
        raise TrainingError(f"{exc}; {_diagnose(terms, model)}") from exc
    grad_norm = clip_grad_norm(optimizer.params, cfg.max_grad_norm)
    optimizer.step()
    return {
        "loss": float(terms.total.data),
        "policy_loss": float(terms.policy.data),
        "value_loss": float(terms.value.data),
        "entropy": float(terms.entropy.data),
        "pred_loss": float(terms.pred.data) if terms.pred is not None else 0.0,
        "grad_norm": grad_norm,
    }


def update(buffers: Sequence[RolloutBuffer], model: MCSModel, optimizer: Adam, cfg,
           rng: np.random.Generator, value_norm: Optional[ValueNorm] = None) -> dict:
    """``ppo_epochs`` passes of ``mini_batches`` shuffled minibatches per task.

    Returns the loss statistics averaged over every gradient step.
    """
    prepare(buffers, cfg.gamma, cfg.gae_lambda, value_norm)
    history = []
    for _ in range(cfg.ppo_epochs):
        splits = [np.array_split(rng.permutation(b.num_samples), cfg.mini_batches) for b in buffers]
        for j in range(cfg.mini_batches):
            batches = [minibatch(b, s[j]) for b, s in zip(buffers, splits) if len(s[j])]
            if batches:
                history.append(gradient_step(model, optimizer, batches, cfg))
    if not history:
        return {}
    return {k: float(np.mean([h[k] for h in history])) for k in history[0]}


def _diagnose(terms: LossTerms, model: MCSModel) -> str:
    parts = [f"{name}={float(getattr(terms, name).data)!r}"
             for name in ("total", "policy", "value", "entropy", "pred") if getattr(terms, name) is not None]
    bad = [n for n, p in model.named_parameters() if not np.isfinite(p.data).all()]
    if bad:
        parts.append("non-finite parameters: " + ", ".join(bad))
    return "non-finite loss: " + ", ".join(parts)
