"""Command-line entry point: ``train``, ``eval``, ``sweep`` and ``dump-latents``.

Runs land under ``--out`` or, failing that, the directory named by the
``MCS_OUT`` environment variable (default ``./runs``).
"""
from __future__ import annotations

import argparse
import csv
import itertools
import json
import logging
import os
import subprocess
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .autodiff.checkpoint import CheckpointError
from .envs import ConfigurationError
from .training import (
    ConfigError,
    TrainConfig,
    evaluate,
    load_config,
    load_model,
    model_policy,
    record_latents,
    run,
    series_specs,
)

OUT_ENV = "MCS_OUT"


def output_root(out: Optional[str]) -> Path:
    return Path(out or os.environ.get(OUT_ENV, "runs"))


def run_dir_name(cfg: TrainConfig) -> str:
    stamp = time.strftime("%Y%m%d-%H%M%S")
    return f"{cfg.series}-seed{cfg.seed}-{stamp}"


def _overrides(args) -> dict:
    out = {
        "series": args.series,
        "seed": args.seed,
        "alpha_hat": getattr(args, "alpha_hat", None),
        "beta": getattr(args, "beta", None),
        "total_steps": args.steps,
    }
    if args.no_mask:
        out["no_mask"] = True
    if args.no_predictor:
        out["no_predictor"] = True
    if getattr(args, "episodes", None) is not None:
        out["eval_episodes"] = args.episodes
    return out


def cmd_train(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    out = output_root(args.out) / run_dir_name(cfg)
    result = run(cfg, out, progress=not args.quiet)
    final = result.rows[-1]["avg_winrate"] if result.rows else float("nan")
    print(f"run directory: {out}")
    print(f"final avg win rate: {final:.4f}")
    return 0


def cmd_eval(args) -> int:
    model, cfg = load_model(args.checkpoint, args.series)
    specs = series_specs(cfg)
    seed = cfg.seed if args.seed is None else args.seed
    report = evaluate(specs, model_policy(model, cfg.alpha_hat, cfg.no_mask), args.episodes, seed)
    rows = report.rows()
    for task, rate, n in rows:
        print(f"{task}\t{rate:.4f}\t{n}")
    dest = Path(args.out) if args.out else Path(args.checkpoint).with_suffix(".eval.csv")
    dest.parent.mkdir(parents=True, exist_ok=True)
    with open(dest, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["task", "win_rate", "episodes"])
        w.writerows([(t, repr(r), n) for t, r, n in rows])
    return 0


def last_mean(values: Sequence[float], n: int = 10) -> float:
    values = list(values)
    return float(np.mean(values[-n:])) if values else float("nan")


def _sweep_cell(cfg: TrainConfig, root: Path) -> dict:
    result = run(cfg, root / f"alpha{cfg.alpha_hat}-beta{cfg.beta}")
    return {
        "alpha_hat": cfg.alpha_hat, "beta": cfg.beta, "steps": cfg.total_steps,
        "final_avg": last_mean(r["avg_winrate"] for r in result.rows),
        "mask_density": last_mean(r["mask_density"] for r in result.rows),
    }


def cmd_sweep(args) -> int:
    base = load_config(args.config, _overrides(argparse.Namespace(**{**vars(args), "alpha_hat": None,
                                                                     "beta": None})))
    alphas = args.alpha_hat or [base.alpha_hat]
    betas = args.beta or [base.beta]
    root = output_root(args.out) / f"sweep-{run_dir_name(base)}"
    root.mkdir(parents=True, exist_ok=True)
    cells = []
    grid = list(itertools.product(alphas, betas))
    cfgs = [TrainConfig.from_mapping({**base.to_dict(), "alpha_hat": a, "beta": b}) for a, b in grid]
    if args.parallel and len(cfgs) > 1:
        procs = []
        for c in cfgs:
            cfg_path = root / f"alpha{c.alpha_hat}-beta{c.beta}.json"
            cfg_path.write_text(json.dumps(c.to_dict()))
            procs.append(subprocess.Popen([sys.executable, "-m", "mcs", "sweep", "--config", str(cfg_path),
                                           "--out", str(root), "--cell"]))
        codes = [p.wait() for p in procs]
        if any(codes):
            print(f"sweep: {sum(1 for c in codes if c)} cell(s) failed", file=sys.stderr)
            return 1
        for c in cfgs:
            cells.append(json.loads((root / f"alpha{c.alpha_hat}-beta{c.beta}" / "cell.json").read_text()))
    else:
        for c in cfgs:
            cells.append(_sweep_cell(c, root))
    report = root / "sweep.csv"
    with open(report, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["alpha_hat", "beta", "steps", "final_avg", "mask_density"],
                           lineterminator="\n")
        w.writeheader()
        w.writerows(cells)
    print(f"budget: {base.total_steps} env steps per cell; final_avg = mean of last 10 evaluations")
    for c in cells:
        print(f"alpha_hat={c['alpha_hat']} beta={c['beta']} final_avg={c['final_avg']:.4f} "
              f"mask_density={c['mask_density']:.4f}")
    print(f"report: {report}")
    return 0


def _sweep_child(args) -> int:
    cfg = load_config(args.config)
    cell = _sweep_cell(cfg, Path(args.out))
    (Path(args.out) / f"alpha{cfg.alpha_hat}-beta{cfg.beta}" / "cell.json").write_text(json.dumps(cell))
    return 0


def cmd_dump_latents(args) -> int:
    model, cfg = load_model(args.checkpoint, args.series)
    seed = cfg.seed if args.seed is None else args.seed
    rng = np.random.default_rng(seed)
    dest = Path(args.out) if args.out else Path(args.checkpoint).with_suffix(".latents.jsonl")
    dest.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with open(dest, "w") as fh:
        for spec in series_specs(cfg):
            seeds = rng.integers(2 ** 31, size=args.episodes)
            for rec in record_latents(spec, model, cfg.alpha_hat, seeds, cfg.no_mask):
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
                count += 1
    print(f"wrote {count} records to {dest}")
    return 0


def _common(p: argparse.ArgumentParser, seed_default=None) -> None:
    p.add_argument("--series", choices=["233", "344", "mini"], default=None)
    p.add_argument("--seed", type=int, default=seed_default)
    p.add_argument("--out", default=None, help=f"output location (default ${OUT_ENV} or ./runs)")


def _train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", default=None, help="YAML/JSON file with TrainConfig fields")
    p.add_argument("--steps", type=int, default=None, help="total environment steps")
    p.add_argument("--no-mask", action="store_true", help="force every gate open")
    p.add_argument("--no-predictor", action="store_true", help="drop the prediction loss")
    p.add_argument("--episodes", type=int, default=None, help="evaluation episodes per task")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mcs", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one configuration")
    _common(p)
    _train_flags(p)
    p.add_argument("--alpha-hat", type=float, default=None)
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="greedy win rates of a checkpoint")
    p.add_argument("checkpoint")
    _common(p)
    p.add_argument("--episodes", type=int, default=32)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="grid over alpha-hat x beta")
    _common(p)
    _train_flags(p)
    p.add_argument("--alpha-hat", type=float, nargs="+", default=None)
    p.add_argument("--beta", type=float, nargs="+", default=None)
    p.add_argument("--parallel", action="store_true", help="run cells as child processes")
    p.add_argument("--cell", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("dump-latents", help="per-step messages and mask rows as JSON lines")
    p.add_argument("checkpoint")
    _common(p)
    p.add_argument("--episodes", type=int, default=3)
    p.set_defaults(func=cmd_dump_latents)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "sweep" and args.cell:
            return _sweep_child(args)
        return args.func(args)
    except (ConfigError, ConfigurationError) as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return 2
    except (CheckpointError, ValueError, KeyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
