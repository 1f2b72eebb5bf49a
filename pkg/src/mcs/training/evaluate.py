"""Greedy evaluation: per-task win rates and their unweighted mean."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from ..comm import MCSModel
from ..envs import AliceBobEnv, TaskSpec
from .rollout import act

# (spec, live envs, stacked observations (B, N, E, D_e)) -> actions (B, N)
Policy = Callable[[TaskSpec, Sequence[AliceBobEnv], np.ndarray], np.ndarray]


@dataclass
class EvalReport:
    win_rates: dict
    episodes: int

    @property
    def avg(self) -> float:
        return float(np.mean(list(self.win_rates.values())))

    def rows(self) -> list[tuple[str, float, int]]:
        """One row per task plus a final ``avg`` row."""
        out = [(k, v, self.episodes) for k, v in self.win_rates.items()]
        out.append(("Avg", self.avg, self.episodes * len(self.win_rates)))
        return out


def model_policy(model: MCSModel, threshold: float, no_mask: bool = False) -> Policy:
    """Greedy actions with noise-free gating; the predictor is never consulted."""
    def policy(spec, envs, obs):
        return act(model, obs, threshold, 1.0, rng=None, no_mask=no_mask,
                   n_valid=spec.num_actions, with_values=False).actions
    return policy


def random_policy(rng: np.random.Generator) -> Policy:
    def policy(spec, envs, obs):
        return rng.integers(spec.num_actions, size=obs.shape[:2])
    return policy


def run_episodes(spec: TaskSpec, policy: Policy, seeds: Sequence[int],
                 on_step: Optional[Callable] = None) -> np.ndarray:
    """Play one episode per seed in lock-step; returns a win flag per episode.

    ``on_step(episode_index, env, obs, actions, result)`` is called for
    every live episode after each step.
    """
    envs = [AliceBobEnv(spec) for _ in seeds]
    obs = np.stack([e.reset(int(s)) for e, s in zip(envs, seeds)])
    live = np.ones(len(envs), dtype=bool)
    wins = np.zeros(len(envs), dtype=bool)
    while live.any():
        idx = np.flatnonzero(live)
        actions = np.asarray(policy(spec, [envs[i] for i in idx], obs[idx]))
        for a, i in zip(actions, idx):
            before = obs[i]
            res = envs[i].step(a)
            if on_step is not None:
                on_step(i, envs[i], before, a, res)
            obs[i] = res.obs
            if res.done:
                live[i] = False
                wins[i] = res.win
    return wins


def evaluate(specs: Sequence[TaskSpec], policy: Policy, episodes: int = 32,
             seed: int = 0) -> EvalReport:
    """WinRate per task over ``episodes`` greedy episodes and their mean.

    Episode layouts are drawn from ``seed`` and are identical for every
    policy evaluated with the same seed.
    """
    ss = np.random.SeedSequence(seed)
    rates = {}
    for spec, child in zip(specs, ss.spawn(len(specs))):
        seeds = np.random.default_rng(child).integers(2 ** 31, size=episodes)
        rates[spec.task_id] = float(run_episodes(spec, policy, seeds).mean())
    return EvalReport(rates, episodes)


def record_latents(spec: TaskSpec, model: MCSModel, threshold: float, seeds: Sequence[int],
                   no_mask: bool = False) -> list[dict]:
    """Greedy episodes logging each agent's message and outgoing mask row.

    One record per (episode, step, agent); ``mask_row[j]`` is the gate from
    this agent to agent ``j``.
    """
    records = []
    for ep, seed in enumerate(seeds):
        env = AliceBobEnv(spec)
        obs = env.reset(int(seed))
        done, t = False, 0
        while not done:
            out = act(model, obs[None], threshold, 1.0, rng=None, no_mask=no_mask,
                      n_valid=spec.num_actions, with_values=False)
            for i in range(spec.num_agents):
                records.append({
                    "task_id": spec.task_id, "agent_id": i, "episode": ep, "step": t,
                    "message": out.messages[0, i].tolist(), "mask_row": out.masks[0, i].tolist(),
                    "action": int(out.actions[0, i]),
                })
            res = env.step(out.actions[0])
            obs, done, t = res.obs, res.done, t + 1
    return records
