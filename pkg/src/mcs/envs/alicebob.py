"""Multi-task AliceBob grid worlds with entity-based observations.

Agents collect targets (diamonds or food) that sit in the top half of the
grid. A target of colour ``c`` is collected on a step where one agent stands
on it while a different agent stands on the trigger (button or key) of colour
``c`` in the bottom half. Observations are one row per entity: relative
``(dx, dy)`` to the observer followed by a one-hot type-and-colour code.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import yaml

ACTIONS = ("up", "down", "left", "right", "stay")
N_ACTIONS = len(ACTIONS)
_MOVES = np.array([(0, -1), (0, 1), (-1, 0), (1, 0), (0, 0)], dtype=np.int64)

# N, NE, E, SE, S, SW, W, NW with y growing downwards
NEIGHBOURS = ((0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1))

TARGET_KINDS = ("diamond", "food")
TRIGGER_KINDS = ("button", "key")
PALETTE = ("red", "blue", "pink", "green", "yellow", "purple")
BASE_CLASSES = ("self", "agent", "wall")

REWARD_PAIR = 1.0
REWARD_WIN = 5.0
PENALTY_COLLISION = 0.5
PENALTY_STEP = 0.1


class ConfigurationError(ValueError):
    """Invalid task or series configuration."""


class ActionError(ValueError):
    """Action outside the discrete action set or wrong count."""


@dataclass(frozen=True)
class TaskSpec:
    task_id: str
    num_agents: int
    target_kind: str
    trigger_kind: str
    colors: tuple
    grid_width: int
    grid_height: int
    max_steps: int
    # one-hot vocabulary shared by every task of the series
    class_names: tuple = field(repr=False, default=())

    @property
    def num_pairs(self) -> int:
        return len(self.colors)

    @property
    def entity_roster(self) -> list[tuple[str, Optional[str]]]:
        roster = [("agent", None)] * self.num_agents
        roster += [(self.target_kind, c) for c in self.colors]
        roster += [(self.trigger_kind, c) for c in self.colors]
        return roster

    @property
    def num_entities(self) -> int:
        return self.num_agents + 2 * self.num_pairs + len(NEIGHBOURS)

    @property
    def onehot_width(self) -> int:
        return len(self.class_names)

    @property
    def feature_dim(self) -> int:
        return 2 + self.onehot_width

    @property
    def obs_shape(self) -> tuple[int, int]:
        return self.num_entities, self.feature_dim

    @property
    def num_actions(self) -> int:
        return N_ACTIONS

    def class_index(self, kind: str, color: Optional[str] = None) -> int:
        key = kind if color is None else f"{kind}:{color}"
        return self.class_names.index(key)


SERIES = {
    # name: (num_agents, num_pairs, num_tasks, grid, max_steps)
    "233": (2, 3, 4, 10, 100),
    "344": (3, 4, 4, 10, 100),
    "mini": (2, 2, 2, 5, 50),
}
_MINI_KINDS = (("diamond", "button"), ("food", "key"))


def series_classes(num_pairs: int) -> tuple:
    colors = PALETTE[:num_pairs]
    kinds = TARGET_KINDS + TRIGGER_KINDS
    return BASE_CLASSES + tuple(f"{k}:{c}" for k in kinds for c in colors)


def make_series(series_name: str, grid_size: Optional[int] = None,
                max_steps: Optional[int] = None) -> list[TaskSpec]:
    """Task specs of a named series ("233", "344" or "mini")."""
    if series_name not in SERIES:
        raise ConfigurationError(f"unknown series {series_name!r}; expected one of {sorted(SERIES)}")
    n_agents, n_pairs, n_tasks, grid, cap = SERIES[series_name]
    grid = grid_size or grid
    cap = max_steps or cap
    palette = PALETTE[:n_pairs]
    classes = series_classes(n_pairs)
    specs = []
    for t in range(n_tasks):
        if series_name == "mini":
            target, trigger = _MINI_KINDS[t]
        else:
            target, trigger = TARGET_KINDS[t // 2], TRIGGER_KINDS[t % 2]
        colors = tuple(palette[(i + t) % n_pairs] for i in range(n_pairs))
        specs.append(TaskSpec(
            task_id=f"{series_name}-{t}", num_agents=n_agents, target_kind=target,
            trigger_kind=trigger, colors=colors, grid_width=grid, grid_height=grid,
            max_steps=cap, class_names=classes))
    return specs


def load_series(path) -> list[TaskSpec]:
    """Series from a YAML/JSON file with keys ``series``, ``grid_size``, ``max_steps``."""
    cfg = yaml.safe_load(Path(path).read_text()) or {}
    if "series" not in cfg:
        raise ConfigurationError(f"{path}: missing 'series' key")
    unknown = set(cfg) - {"series", "grid_size", "max_steps"}
    if unknown:
        raise ConfigurationError(f"{path}: unknown keys {sorted(unknown)}")
    return make_series(str(cfg["series"]), cfg.get("grid_size"), cfg.get("max_steps"))


@dataclass
class StepResult:
    obs: np.ndarray
    reward: float
    done: bool
    win: bool
    info: dict


class AliceBobEnv:
    """One task instance. Call :meth:`reset` before stepping."""

    def __init__(self, spec: TaskSpec):
        self.spec = spec
        half = spec.grid_height // 2
        self._top = [(x, y) for y in range(half) for x in range(spec.grid_width)]
        self._bottom = [(x, y) for y in range(spec.grid_height - half, spec.grid_height)
                        for x in range(spec.grid_width)]
        p = spec.num_pairs
        if p > len(self._top) or p > len(self._bottom):
            raise ConfigurationError(f"{spec.task_id}: grid too small for {p} pairs")
        if spec.grid_width * spec.grid_height < spec.num_agents + 2 * p:
            raise ConfigurationError(f"{spec.task_id}: grid too small to place all entities")
        self._agent_cls = np.zeros(spec.onehot_width)
        self._agent_cls[spec.class_index("agent")] = 1.0
        self._self_cls = np.zeros(spec.onehot_width)
        self._self_cls[spec.class_index("self")] = 1.0
        self._wall_cls = np.zeros(spec.onehot_width)
        self._wall_cls[spec.class_index("wall")] = 1.0
        self._target_cls = np.zeros((p, spec.onehot_width))
        self._trigger_cls = np.zeros((p, spec.onehot_width))
        for i, c in enumerate(spec.colors):
            self._target_cls[i, spec.class_index(spec.target_kind, c)] = 1.0
            self._trigger_cls[i, spec.class_index(spec.trigger_kind, c)] = 1.0
        self.agents = self.targets = self.triggers = None
        self.alive = None
        self.t = 0
        self.finished = True

    # -- lifecycle -----------------------------------------------------
    def reset(self, seed=None) -> np.ndarray:
        rng = np.random.default_rng(seed)
        s = self.spec
        p = s.num_pairs
        top = rng.choice(len(self._top), size=p, replace=False)
        bottom = rng.choice(len(self._bottom), size=p, replace=False)
        self.targets = np.array([self._top[i] for i in top], dtype=np.int64)
        self.triggers = np.array([self._bottom[i] for i in bottom], dtype=np.int64)
        taken = {tuple(c) for c in self.targets} | {tuple(c) for c in self.triggers}
        free = [(x, y) for y in range(s.grid_height) for x in range(s.grid_width) if (x, y) not in taken]
        pick = rng.choice(len(free), size=s.num_agents, replace=False)
        self.agents = np.array([free[i] for i in pick], dtype=np.int64)
        self.alive = np.ones(p, dtype=bool)
        self.t = 0
        self.finished = False
        return self.observe_all()

    def step(self, actions: Sequence[int]) -> StepResult:
        s = self.spec
        if self.finished:
            raise RuntimeError(f"{s.task_id}: episode finished; call reset()")
        actions = np.asarray(actions)
        if actions.shape != (s.num_agents,):
            raise ActionError(f"{s.task_id}: expected {s.num_agents} actions, got shape {actions.shape}")
        if not np.issubdtype(actions.dtype, np.integer) or actions.min() < 0 or actions.max() >= N_ACTIONS:
            raise ActionError(f"{s.task_id}: actions must be integers in [0, {N_ACTIONS}), got {actions.tolist()}")

        prop = self.agents + _MOVES[actions]
        inside = ((prop[:, 0] >= 0) & (prop[:, 0] < s.grid_width)
                  & (prop[:, 1] >= 0) & (prop[:, 1] < s.grid_height))
        prop[~inside] = self.agents[~inside]
        prop, collisions = _resolve_collisions(self.agents, prop)
        self.agents = prop

        pairs = 0
        cells = [tuple(a) for a in self.agents]
        for c in np.flatnonzero(self.alive):
            on_target = [i for i, a in enumerate(cells) if a == tuple(self.targets[c])]
            on_trigger = [i for i, a in enumerate(cells) if a == tuple(self.triggers[c])]
            if any(i != j for i in on_target for j in on_trigger):
                self.alive[c] = False
                pairs += 1
        win = not self.alive.any()
        self.t += 1
        done = win or self.t >= s.max_steps
        self.finished = done
        reward = (REWARD_PAIR * pairs + REWARD_WIN * win
                  - PENALTY_COLLISION * collisions - PENALTY_STEP)
        info = {"pairs": pairs, "collisions": collisions, "t": self.t}
        return StepResult(self.observe_all(), float(reward), bool(done), bool(win), info)

    # -- observation ---------------------------------------------------
    def observe_all(self) -> np.ndarray:
        return np.stack([self.observe(i) for i in range(self.spec.num_agents)])

    def observe(self, agent_index: int) -> np.ndarray:
        s = self.spec
        n, p = s.num_agents, s.num_pairs
        obs = np.zeros(s.obs_shape)
        me = self.agents[agent_index]
        obs[0, 2:] = self._self_cls
        row = 1
        for j in range(n):
            if j == agent_index:
                continue
            obs[row, :2] = self.agents[j] - me
            obs[row, 2:] = self._agent_cls
            row += 1
        for c in range(p):
            if self.alive[c]:
                obs[row + c, :2] = self.targets[c] - me
                obs[row + c, 2:] = self._target_cls[c]
            obs[row + p + c, :2] = self.triggers[c] - me
            obs[row + p + c, 2:] = self._trigger_cls[c]
        row += 2 * p
        for k, (dx, dy) in enumerate(NEIGHBOURS):
            obs[row + k, 0], obs[row + k, 1] = dx, dy
            obs[row + k, 2:] = self._cell_code(me[0] + dx, me[1] + dy, agent_index)
        return obs

    def _cell_code(self, x: int, y: int, observer: int) -> np.ndarray:
        s = self.spec
        if not (0 <= x < s.grid_width and 0 <= y < s.grid_height):
            return self._wall_cls
        code = np.zeros(s.onehot_width)
        for j, a in enumerate(self.agents):
            if j != observer and a[0] == x and a[1] == y:
                code += self._agent_cls
        for c in range(s.num_pairs):
            if self.alive[c] and self.targets[c, 0] == x and self.targets[c, 1] == y:
                code += self._target_cls[c]
            if self.triggers[c, 0] == x and self.triggers[c, 1] == y:
                code += self._trigger_cls[c]
        return code

    def state_summary(self) -> dict:
        return {
            "t": self.t,
            "agents": self.agents.tolist(),
            "targets": self.targets.tolist(),
            "triggers": self.triggers.tolist(),
            "alive": self.alive.tolist(),
        }

    def set_state(self, agents, targets, triggers, alive=None, t: int = 0) -> np.ndarray:
        """Place entities explicitly (scripted tests and demos)."""
        self.agents = np.array(agents, dtype=np.int64)
        self.targets = np.array(targets, dtype=np.int64)
        self.triggers = np.array(triggers, dtype=np.int64)
        self.alive = np.ones(self.spec.num_pairs, dtype=bool) if alive is None else np.array(alive, dtype=bool)
        self.t = t
        self.finished = False
        return self.observe_all()


def _resolve_collisions(current: np.ndarray, proposed: np.ndarray) -> tuple[np.ndarray, int]:
    """Bounce agents that would share a cell or swap cells.

    Reverting one pair can create a new clash with an agent that wanted the
    vacated cell, so resolution repeats until stable. Each distinct pair that
    clashed is charged once.
    """
    prop = proposed.copy()
    n = len(prop)
    charged = set()
    changed = True
    while changed:
        changed = False
        for i in range(n):
            for j in range(i + 1, n):
                same = prop[i, 0] == prop[j, 0] and prop[i, 1] == prop[j, 1]
                swap = (prop[i] == current[j]).all() and (prop[j] == current[i]).all() \
                    and not (prop[i] == current[i]).all()
                if same or swap:
                    charged.add((i, j))
                    if not ((prop[i] == current[i]).all() and (prop[j] == current[j]).all()):
                        prop[i], prop[j] = current[i], current[j]
                        changed = True
    return prop, len(charged)


class TraceRecorder:
    """Collects one JSON-serialisable record per step; dump as JSON lines."""

    def __init__(self):
        self.records: list[dict] = []

    def record(self, env: AliceBobEnv, actions, result: StepResult, mask=None) -> None:
        rec = {
            "task_id": env.spec.task_id,
            "state": env.state_summary(),
            "actions": [int(a) for a in actions],
            "reward": result.reward,
            "done": result.done,
            "win": result.win,
            "info": result.info,
        }
        if mask is not None:
            rec["mask"] = np.asarray(mask).tolist()
        self.records.append(rec)

    def dump(self, path) -> None:
        with open(path, "w") as fh:
            for rec in self.records:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")


def scripted_actions(env: AliceBobEnv) -> np.ndarray:
    """Greedy pair solver used as a reference policy.

    Agent 0 heads for the first alive target and agent 1 for the matching
    trigger; any further agents stay put. When the two planned moves clash,
    agent 1 (then agent 0) side-steps to the best non-clashing move.
    """
    s = env.spec
    stay = ACTIONS.index("stay")
    acts = np.full(s.num_agents, stay, dtype=np.int64)
    alive = np.flatnonzero(env.alive)
    if alive.size == 0 or s.num_agents < 2:
        return acts
    c = alive[0]
    goals = (env.targets[c], env.triggers[c])
    ranked = [_ranked_moves(env, env.agents[i], goals[i]) for i in range(2)]

    def clash(a0, a1):
        n0 = env.agents[0] + _MOVES[a0]
        n1 = env.agents[1] + _MOVES[a1]
        if (n0 == n1).all():
            return True
        return (n0 == env.agents[1]).all() and (n1 == env.agents[0]).all()

    for a0 in ranked[0]:
        for a1 in ranked[1]:
            if not clash(a0, a1):
                acts[0], acts[1] = a0, a1
                return acts
    return acts


def _ranked_moves(env: AliceBobEnv, pos, goal) -> list[int]:
    """Legal actions sorted by resulting Manhattan distance to ``goal``."""
    s = env.spec
    scored = []
    for a, mv in enumerate(_MOVES):
        nx, ny = pos[0] + mv[0], pos[1] + mv[1]
        if not (0 <= nx < s.grid_width and 0 <= ny < s.grid_height):
            continue
        # stay ranks after equal-distance moves only when not already at the goal
        scored.append((abs(goal[0] - nx) + abs(goal[1] - ny), a == ACTIONS.index("stay"), a))
    scored.sort()
    return [a for _, _, a in scored]


def with_overrides(spec: TaskSpec, **kw) -> TaskSpec:
    return replace(spec, **kw)
