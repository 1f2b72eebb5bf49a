"""Multi-task actor-critic training with a clipped surrogate objective."""
from .config import ConfigError, SERIES_DEFAULTS, TrainConfig, load_config
from .evaluate import EvalReport, evaluate, model_policy, random_policy, record_latents, run_episodes
from .rollout import RolloutBuffer, TaskWorker, act, collect, compute_advantages, mask_density, normalize
from .run import RunResult, build_model, load_model, metrics_header, run, save_model, series_specs
from .update import Batch, TrainingError, ValueNorm, combined_loss, make_optimizer, prepare, task_loss, update

__all__ = [
    "ConfigError", "SERIES_DEFAULTS", "TrainConfig", "load_config",
    "EvalReport", "evaluate", "model_policy", "random_policy", "record_latents", "run_episodes",
    "RolloutBuffer", "TaskWorker", "act", "collect", "compute_advantages", "mask_density", "normalize",
    "RunResult", "build_model", "load_model", "metrics_header", "run", "save_model", "series_specs",
    "Batch", "TrainingError", "ValueNorm", "combined_loss", "make_optimizer", "prepare", "task_loss", "update",
]
