"""Training configuration with file and command-line overrides.

Precedence, lowest to highest: built-in defaults, per-series threshold and
coefficient defaults, config file, explicit overrides.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Mapping, Optional

import yaml


class ConfigError(ValueError):
    """A config field failed validation; message names the field."""


# threshold and predictor weight per series
SERIES_DEFAULTS = {
    "233": {"alpha_hat": 0.5, "beta": 0.1},
    "344": {"alpha_hat": 0.7, "beta": 1.0},
    "mini": {"alpha_hat": 0.5, "beta": 0.1},
}


@dataclass
class TrainConfig:
    series: str = "mini"
    seed: int = 0
    total_steps: int = 200_000

    lr: float = 5e-4
    critic_lr: float = 5e-4
    opti_eps: float = 1e-5
    ppo_epochs: int = 8
    mini_batches: int = 10
    clip_param: float = 0.2
    entropy_coef: float = 0.01
    # small so critic updates do not drag the shared encoder away from the policy
    value_coef: float = 0.05
    # critic regresses running-normalised returns
    value_norm: bool = False
    max_grad_norm: float = 10.0
    gamma: float = 0.99
    gae_lambda: float = 0.95

    hidden: int = 64
    message_dim: int = 10
    ffn_dim: int = 64
    enc_blocks: int = 2
    enc_heads: int = 4
    policy_heads: int = 4
    pred_heads: int = 4
    pred_blocks: int = 1

    # parallel episodes per task in each collection round
    batch_size: int = 32
    # steps per collection round; None means the episode cap
    rollout_length: Optional[int] = 10
    eval_episodes: int = 32
    # evaluate after every this many collection rounds
    eval_every: int = 5
    checkpoint_every: int = 0

    alpha_hat: Optional[float] = None
    beta: Optional[float] = None
    tau: float = 1.0
    no_mask: bool = False
    no_predictor: bool = False

    grid_size: Optional[int] = None
    max_steps: Optional[int] = None

    def __post_init__(self):
        defaults = SERIES_DEFAULTS.get(str(self.series), SERIES_DEFAULTS["mini"])
        if self.alpha_hat is None:
            self.alpha_hat = defaults["alpha_hat"]
        if self.beta is None:
            self.beta = defaults["beta"]
        self.validate()

    @property
    def effective_beta(self) -> float:
        return 0.0 if self.no_predictor else float(self.beta)

    def validate(self) -> None:
        if str(self.series) not in SERIES_DEFAULTS:
            raise ConfigError(f"series: unknown series {self.series!r}")
        if not 0.0 <= self.alpha_hat <= 1.0:
            raise ConfigError(f"alpha_hat: must lie in [0, 1], got {self.alpha_hat}")
        if self.beta < 0:
            raise ConfigError(f"beta: must be >= 0, got {self.beta}")
        if self.tau <= 0:
            raise ConfigError(f"tau: must be > 0, got {self.tau}")
        for name in ("total_steps", "ppo_epochs", "mini_batches", "batch_size", "eval_episodes",
                     "hidden", "message_dim", "enc_heads", "policy_heads", "eval_every"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name}: must be >= 1, got {getattr(self, name)}")
        if self.hidden % self.enc_heads or self.hidden % self.policy_heads or self.hidden % self.pred_heads:
            raise ConfigError(f"hidden: {self.hidden} not divisible by the attention head counts")
        if not 0 <= self.gamma <= 1 or not 0 <= self.gae_lambda <= 1:
            raise ConfigError("gamma/gae_lambda: must lie in [0, 1]")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def field_names(cls) -> set:
        return {f.name for f in fields(cls)}

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> "TrainConfig":
        unknown = set(data) - cls.field_names()
        if unknown:
            raise ConfigError(f"unknown config field(s): {', '.join(sorted(unknown))}")
        types = {f.name: f.type for f in fields(cls)}
        clean = {}
        for key, value in data.items():
            clean[key] = _coerce(key, value, types[key])
        try:
            return cls(**clean)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


def _coerce(name: str, value, annotation: str):
    if value is None:
        return None
    kind = str(annotation)
    try:
        if "bool" in kind:
            if isinstance(value, str):
                return value.lower() in ("1", "true", "yes", "on")
            return bool(value)
        if "int" in kind:
            if isinstance(value, float) and not value.is_integer():
                raise ValueError
            return int(float(value)) if isinstance(value, str) else int(value)
        if "float" in kind:
            return float(value)
        if "str" in kind:
            return str(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: cannot interpret {value!r} as {kind}") from exc
    return value


def load_config(path=None, overrides: Optional[Mapping[str, Any]] = None) -> TrainConfig:
    """Defaults < file < overrides. ``None`` override values are ignored."""
    data: dict = {}
    if path is not None:
        loaded = yaml.safe_load(Path(path).read_text())
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        data.update(loaded)
    for key, value in (overrides or {}).items():
        if value is not None:
            data[key] = value
    return TrainConfig.from_mapping(data)
