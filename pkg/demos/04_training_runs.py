# %% [markdown]
# # Training over a lossy channel
#
# A short comparison on the pendulum swing-up: HR3L (features, model-based
# estimation) against PPO that simply holds the last observation it
# received. Both see the same channel seed. The desk-scale budget is 74
# rounds of 4096 steps; here we run a handful of rounds to keep it quick.
# Set ROUNDS = 74 for the real thing (a few minutes per run).

# %%
import time

from hr3l.config import ExperimentConfig
from hr3l.orchestrator import run_experiment

ROUNDS = 6
results = {}
for method in ("hr3l", "ppo_hold"):
    cfg = ExperimentConfig(method=method, channel="ge925", rounds=ROUNDS)
    t0 = time.perf_counter()
    results[method] = run_experiment(cfg, seed=0)
    print(f"{method}: {time.perf_counter() - t0:.0f} s")

# %%
print("round  hr3l    ppo_hold")
for a, b in zip(results["hr3l"].rows, results["ppo_hold"].rows):
    print(f"{a['round']:5d}  {a['mean_reward']:.3f}   {b['mean_reward']:.3f}")

# %% [markdown]
# Metrics are plain CSV, one row per round, floats written exactly.

# %%
print(results["hr3l"].to_csv())
