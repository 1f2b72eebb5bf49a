"""
A short training run on the mini series
=======================================

Trains a small model for a few collection rounds, then evaluates it and
dumps latent messages. The budget here is tiny, so win rates stay near
the random baseline. The full 200k-step run is the acceptance suite's job.
"""

import tempfile
from pathlib import Path

import numpy as np

from mcs.envs import make_series
from mcs.training import TrainConfig, evaluate, model_policy, random_policy, record_latents, run

# %%
# A reduced configuration: narrower network, 4 parallel episodes per task
# and 10-step rollouts. Metrics are written once per evaluation.
cfg = TrainConfig(series="mini", seed=0, hidden=32, ffn_dim=32, batch_size=4, rollout_length=10,
                  total_steps=800, ppo_epochs=2, mini_batches=2, eval_episodes=8)
out = Path(tempfile.mkdtemp()) / "mini-demo"
result = run(cfg, out)
for row in result.rows:
    print(f"step {row['step']:>5}  avg {row['avg_winrate']:.3f}  density {row['mask_density']:.3f}")
print("files:", sorted(p.name for p in out.iterdir()))

# %%
# Compare against a uniformly random policy on the same evaluation layouts.
specs = make_series("mini")
trained = evaluate(specs, model_policy(result.model, cfg.alpha_hat), 16, seed=1)
rand = evaluate(specs, random_policy(np.random.default_rng(0)), 16, seed=1)
for (task, a, _), (_, b, _) in zip(trained.rows(), rand.rows()):
    print(f"{task:>6}: trained {a:.3f} random {b:.3f}")

# %%
# Each latent record holds one agent's message and the mask row it used.
recs = list(record_latents(specs[0], result.model, cfg.alpha_hat, seeds=[3]))
print(len(recs), "records; first:", {k: recs[0][k] for k in ("task_id", "agent_id", "step", "mask_row")})
