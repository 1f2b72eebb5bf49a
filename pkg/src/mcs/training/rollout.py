"""On-policy rollout collection and advantage estimation."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..autodiff import functional as F
from ..comm import MCSModel, action_logits, communicate, sample_categorical
from ..envs import AliceBobEnv, TaskSpec


@dataclass
class RolloutBuffer:
    """One task's transitions, laid out ``(T, n_envs, ...)``.

    ``gate_noise`` holds the Gumbel draws used while acting so the update can
    replay the exact communication graph.
    """

    task_id: str
    obs: np.ndarray          # (T, B, N, E, D_e)
    gate_noise: np.ndarray   # (T, B, N, N, 2)
    messages: np.ndarray     # (T, B, N, D_m)
    masks: np.ndarray        # (T, B, N, N)
    aggregated: np.ndarray   # (T, B, N, D_h)
    actions: np.ndarray      # (T, B, N) int
    log_probs: np.ndarray    # (T, B, N)
    values: np.ndarray       # (T, B, N)
    rewards: np.ndarray      # (T, B)
    dones: np.ndarray        # (T, B) bool
    last_values: np.ndarray  # (B, N) bootstrap at the horizon
    n_valid_actions: int = 5
    advantages: Optional[np.ndarray] = None
    returns: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return self.rewards.shape[0]

    @property
    def num_samples(self) -> int:
        return self.rewards.shape[0] * self.rewards.shape[1]

    def flat(self, name: str) -> np.ndarray:
        arr = getattr(self, name)
        return arr.reshape(-1, *arr.shape[2:])

    def clear(self) -> None:
        for f in ("obs", "gate_noise", "messages", "masks", "aggregated", "actions", "log_probs",
                  "values", "rewards", "dones", "advantages", "returns"):
            setattr(self, f, None)


def compute_advantages(rewards: np.ndarray, values: np.ndarray, dones: np.ndarray,
                       last_values: np.ndarray, gamma: float, lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Generalised advantage estimates and value targets.

    ``rewards``/``dones`` are ``(T, B)`` and shared by all agents;
    ``values`` is ``(T, B, N)``. ``dones[t]`` marks that the episode ended
    after step ``t``, so no value is bootstrapped across it.
    """
    T = rewards.shape[0]
    adv = np.zeros_like(values)
    gae = np.zeros_like(values[0])
    for t in reversed(range(T)):
        next_v = last_values if t == T - 1 else values[t + 1]
        live = (1.0 - dones[t].astype(np.float64))[..., None]
        delta = rewards[t][..., None] + gamma * next_v * live - values[t]
        gae = delta + gamma * lam * live * gae
        adv[t] = gae
    return adv, adv + values


def normalize(x: np.ndarray, eps: float = 1e-8) -> np.ndarray:
    return (x - x.mean()) / (x.std() + eps)


class TaskWorker:
    """A batch of independent episodes of one task, auto-resetting on done."""

    def __init__(self, spec: TaskSpec, n_envs: int, rng: np.random.Generator):
        self.spec = spec
        self.rng = rng
        self.envs = [AliceBobEnv(spec) for _ in range(n_envs)]
        self.obs = np.stack([e.reset(self._seed()) for e in self.envs])
        self.returns = np.zeros(n_envs)
        self.episodes = 0
        self.wins = 0
        # (return, win) of episodes finished since the last drain
        self.finished: list[tuple[float, bool]] = []

    def _seed(self) -> int:
        return int(self.rng.integers(2 ** 31))

    def step(self, actions: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        rewards = np.zeros(len(self.envs))
        dones = np.zeros(len(self.envs), dtype=bool)
        for b, env in enumerate(self.envs):
            res = env.step(actions[b])
            rewards[b], dones[b] = res.reward, res.done
            self.returns[b] += res.reward
            if res.done:
                self.episodes += 1
                self.wins += int(res.win)
                self.finished.append((float(self.returns[b]), bool(res.win)))
                self.returns[b] = 0.0
                self.obs[b] = env.reset(self._seed())
            else:
                self.obs[b] = res.obs
        return rewards, dones

    def drain(self) -> list[tuple[float, bool]]:
        out, self.finished = self.finished, []
        return out


@dataclass
class ActResult:
    actions: np.ndarray
    log_probs: np.ndarray
    values: np.ndarray
    noise: Optional[np.ndarray]
    messages: np.ndarray
    masks: np.ndarray
    aggregated: np.ndarray
    scores: np.ndarray = field(repr=False, default=None)


def act(model: MCSModel, obs: np.ndarray, threshold: float, tau: float,
        rng: Optional[np.random.Generator], no_mask: bool = False,
        n_valid: Optional[int] = None, with_values: bool = True) -> ActResult:
    """Forward pass without a tape. ``rng=None`` means greedy, noise-free acting."""
    comm = communicate(obs, model, threshold, tau, rng=rng, open_all=no_mask)
    logits = action_logits(obs, comm.aggregated, model.policy, n_valid)
    logp = F.log_softmax(logits, axis=-1).data
    if rng is None:
        actions = np.argmax(logp, axis=-1)
    else:
        actions = sample_categorical(np.exp(logp), rng)
    chosen = np.take_along_axis(logp, actions[..., None], axis=-1)[..., 0]
    values = model.critic(obs, comm.aggregated).data[..., 0] if with_values else None
    return ActResult(actions, chosen, values, comm.noise, comm.messages.data, comm.mask.data,
                     comm.aggregated.data, comm.scores.data)


def collect(workers: Sequence[TaskWorker], model: MCSModel, horizon: int, threshold: float,
            tau: float, rng: np.random.Generator, no_mask: bool = False) -> list[RolloutBuffer]:
    """Run every task for ``horizon`` steps and return one buffer per task."""
    store = [dict(obs=[], gate_noise=[], messages=[], masks=[], aggregated=[], actions=[],
                  log_probs=[], values=[], rewards=[], dones=[]) for _ in workers]
    for _ in range(horizon):
        for w, s in zip(workers, store):
            obs = w.obs.copy()
            out = act(model, obs, threshold, tau, rng, no_mask, w.spec.num_actions)
            rewards, dones = w.step(out.actions)
            s["obs"].append(obs)
            s["gate_noise"].append(out.noise)
            s["messages"].append(out.messages)
            s["masks"].append(out.masks)
            s["aggregated"].append(out.aggregated)
            s["actions"].append(out.actions)
            s["log_probs"].append(out.log_probs)
            s["values"].append(out.values)
            s["rewards"].append(rewards)
            s["dones"].append(dones)
    buffers = []
    for w, s in zip(workers, store):
        last = act(model, w.obs, threshold, tau, rng, no_mask, w.spec.num_actions)
        buffers.append(RolloutBuffer(task_id=w.spec.task_id, last_values=last.values,
                                     n_valid_actions=w.spec.num_actions,
                                     **{k: np.stack(v) for k, v in s.items()}))
    return buffers


def mask_density(buffers: Sequence[RolloutBuffer]) -> float:
    """Fraction of off-diagonal mask entries that were nonzero."""
    kept, total = 0, 0
    for buf in buffers:
        n = buf.masks.shape[-1]
        off = ~np.eye(n, dtype=bool)
        kept += int((buf.masks[..., off] != 0).sum())
        total += buf.masks[..., off].size
    return kept / total if total else 0.0
