"""Outer training loop: collect, update, evaluate, persist."""
from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ..autodiff import checkpoint as ckpt
from ..comm import MCSModel, ModelConfig
from ..envs import TaskSpec, make_series
from .config import TrainConfig
from .evaluate import EvalReport, evaluate, model_policy
from .rollout import TaskWorker, collect, mask_density
from .update import ValueNorm, make_optimizer, update

log = logging.getLogger(__name__)

LOSS_COLUMNS = ("policy_loss", "value_loss", "pred_loss", "entropy", "mask_density")


def series_specs(cfg: TrainConfig) -> list[TaskSpec]:
    return make_series(cfg.series, grid_size=cfg.grid_size, max_steps=cfg.max_steps)


def model_config(cfg: TrainConfig, specs: Sequence[TaskSpec]) -> ModelConfig:
    widths = {s.feature_dim for s in specs}
    if len(widths) != 1:
        raise ValueError(f"tasks disagree on feature width: {sorted(widths)}")
    return ModelConfig(feature_dim=widths.pop(), n_actions=max(s.num_actions for s in specs),
                       max_agents=max(s.num_agents for s in specs), hidden=cfg.hidden,
                       message_dim=cfg.message_dim, ffn_dim=cfg.ffn_dim, enc_blocks=cfg.enc_blocks,
                       enc_heads=cfg.enc_heads, policy_heads=cfg.policy_heads,
                       pred_heads=cfg.pred_heads, pred_blocks=cfg.pred_blocks)


def _seeds(cfg: TrainConfig) -> dict:
    names = ("model", "collect", "envs", "update", "eval")
    children = np.random.SeedSequence(cfg.seed).spawn(len(names))
    return dict(zip(names, children))


def build_model(cfg: TrainConfig, specs: Optional[Sequence[TaskSpec]] = None,
                with_predictor: bool = True) -> MCSModel:
    specs = specs or series_specs(cfg)
    model_seed = int(_seeds(cfg)["model"].generate_state(1)[0])
    return MCSModel(model_config(cfg, specs), seed=model_seed, with_predictor=with_predictor)


def eval_seed(cfg: TrainConfig) -> int:
    return int(_seeds(cfg)["eval"].generate_state(1)[0])


def metrics_header(specs: Sequence[TaskSpec]) -> list[str]:
    return ["step", *(f"winrate_{s.task_id}" for s in specs), "avg_winrate", *LOSS_COLUMNS]


def save_model(path, model: MCSModel, cfg: TrainConfig, step: int,
               include_predictor: bool = True) -> tuple[str, str]:
    """Write a checkpoint; returns ``(file sha256, parameter content hash)``.

    ``include_predictor=False`` writes an execution-only checkpoint.
    """
    state = model.state_dict()
    if not include_predictor:
        state = type(state)((k, v) for k, v in state.items() if not k.startswith("predictor."))
    meta = {"config": cfg.to_dict(), "step": step}
    return ckpt.save(path, state, meta), ckpt.content_hash(state)


def load_model(path, series: Optional[str] = None) -> tuple[MCSModel, TrainConfig]:
    """Rebuild a model from a checkpoint, optionally against another series.

    A series whose observation width or agent count differs from the
    checkpoint raises a ``ValueError`` naming the offending parameter.
    Checkpoints without predictor weights load into a predictor-free model.
    """
    state, meta = ckpt.load(path)
    cfg_data = dict(meta.get("config", {}))
    if series is not None:
        cfg_data["series"] = str(series)
    cfg = TrainConfig.from_mapping(cfg_data)
    with_predictor = any(k.startswith("predictor.") for k in state)
    model = build_model(cfg, with_predictor=with_predictor)
    model.load_state_dict(state)
    return model, cfg


@dataclass
class RunResult:
    config: TrainConfig
    model: MCSModel
    rows: list = field(default_factory=list)
    checkpoints: list = field(default_factory=list)
    out_dir: Optional[Path] = None

    def avg_curve(self) -> tuple[np.ndarray, np.ndarray]:
        steps = np.array([r["step"] for r in self.rows], dtype=np.int64)
        avg = np.array([r["avg_winrate"] for r in self.rows], dtype=np.float64)
        return steps, avg


def _fmt(v) -> str:
    return str(v) if isinstance(v, (int, np.integer)) else repr(float(v))


def run(cfg: TrainConfig, out_dir=None, progress: bool = False) -> RunResult:
    """Train from scratch. With ``out_dir`` the metrics CSV, checkpoints and
    a manifest are written there; output is fully determined by the config.
    """
    specs = series_specs(cfg)
    model = build_model(cfg, specs)
    optimizer = make_optimizer(model, cfg)
    seeds = _seeds(cfg)
    collect_rng = np.random.default_rng(seeds["collect"])
    update_rng = np.random.default_rng(seeds["update"])
    env_rngs = [np.random.default_rng(s) for s in seeds["envs"].spawn(len(specs))]
    workers = [TaskWorker(s, cfg.batch_size, r) for s, r in zip(specs, env_rngs)]
    horizon = cfg.rollout_length or max(s.max_steps for s in specs)
    per_round = horizon * cfg.batch_size * len(specs)
    rounds = max(1, cfg.total_steps // per_round)
    policy = model_policy(model, cfg.alpha_hat, cfg.no_mask)
    e_seed = eval_seed(cfg)
    value_norm = ValueNorm() if cfg.value_norm else None

    result = RunResult(cfg, model)
    writer = fh = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        (out_dir / "checkpoints").mkdir(parents=True, exist_ok=True)
        result.out_dir = out_dir
        fh = open(out_dir / "metrics.csv", "w", newline="")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(metrics_header(specs))
    try:
        for r in range(1, rounds + 1):
            t0 = time.perf_counter()
            buffers = collect(workers, model, horizon, cfg.alpha_hat, cfg.tau, collect_rng, cfg.no_mask)
            density = mask_density(buffers)
            done_eps = [e for w in workers for e in w.drain()]
            stats = update(buffers, model, optimizer, cfg, update_rng, value_norm)
            for b in buffers:
                b.clear()
            step = r * per_round
            if r % cfg.eval_every == 0 or r == rounds:
                report = evaluate(specs, policy, cfg.eval_episodes, e_seed)
                row = _row(step, report, stats, density)
                result.rows.append(row)
                if writer is not None:
                    writer.writerow([_fmt(row[k]) for k in metrics_header(specs)])
                    fh.flush()
                msg = (f"step {step} avg {report.avg:.3f} "
                       + " ".join(f"{k}={v:.2f}" for k, v in report.win_rates.items())
                       + f" | train win {np.mean([w for _, w in done_eps]) if done_eps else 0:.3f}"
                       + f" return {np.mean([r for r, _ in done_eps]) if done_eps else 0:.2f}"
                       + f" | density {density:.3f} ent {stats.get('entropy', 0):.3f}"
                       + f" ({time.perf_counter() - t0:.1f}s)")
                log.info(msg)
                if progress:
                    print(msg, flush=True)
            if out_dir is not None and cfg.checkpoint_every and r % cfg.checkpoint_every == 0:
                _checkpoint(result, step)
        if out_dir is not None:
            _checkpoint(result, rounds * per_round, final=True)
            write_manifest(result)
    finally:
        if fh is not None:
            fh.close()
    return result


def _row(step: int, report: EvalReport, stats: dict, density: float) -> dict:
    row = {"step": step}
    row.update({f"winrate_{k}": v for k, v in report.win_rates.items()})
    row["avg_winrate"] = report.avg
    for k in LOSS_COLUMNS[:-1]:
        row[k] = stats.get(k, 0.0)
    row["mask_density"] = density
    return row


def _checkpoint(result: RunResult, step: int, final: bool = False) -> None:
    name = "final.ckpt" if final else f"step_{step:09d}.ckpt"
    path = result.out_dir / "checkpoints" / name
    sha, chash = save_model(path, result.model, result.config, step)
    result.checkpoints.append({"path": f"checkpoints/{name}", "step": step, "sha256": sha,
                               "content_hash": chash})


def write_manifest(result: RunResult, extra: Optional[dict] = None) -> Path:
    cfg = result.config
    manifest = {
        "series": cfg.series,
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        "files": {"metrics": "metrics.csv", "checkpoints": result.checkpoints,
                  "manifest": "manifest.json"},
    }
    if extra:
        manifest.update(extra)
    path = result.out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path
