"""
A scripted episode in the AliceBob mini series
==============================================

Two agents share a 5x5 grid with two coloured target/trigger pairs.
A pair completes when one agent stands on a target while another stands
on the trigger of the same colour. This script plays one episode with the
greedy reference policy and draws the grid after every step.
"""

import numpy as np

from mcs.envs import ACTIONS, AliceBobEnv, make_series, scripted_actions

# %%
# Build the first mini task and look at its entity roster. Every agent sees
# one feature row per roster entry plus eight rows for the surrounding cells.
spec = make_series("mini")[0]
print(spec.task_id, spec.entity_roster)
print("observation shape per agent:", spec.obs_shape)

env = AliceBobEnv(spec)
obs = env.reset(7)


def draw(env):
    grid = np.full((env.spec.grid_height, env.spec.grid_width), ".")
    for c, (t, g) in enumerate(zip(env.targets, env.triggers)):
        if env.alive[c]:
            grid[t[1], t[0]] = "T" if c == 0 else "t"
            grid[g[1], g[0]] = "G" if c == 0 else "g"
    for i, a in enumerate(env.agents):
        grid[a[1], a[0]] = str(i)
    return "\n".join(" ".join(row) for row in grid)


# %%
# Play until the episode ends. Rewards are +1 per pair, +5 for the last
# pair, -0.5 per collision and -0.1 per step.
print(draw(env))
total, done = 0.0, False
while not done:
    acts = scripted_actions(env)
    res = env.step(acts)
    total += res.reward
    done = res.done
    print(f"\nstep {env.t}: {[ACTIONS[a] for a in acts]} reward {res.reward:+.1f}")
    print(draw(env))
print(f"\nwin={res.win} return={total:.1f}")
