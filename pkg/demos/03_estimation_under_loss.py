# %% [markdown]
# # Keeping a belief when packets go missing
#
# The receiver holds an estimate of the feature vector. Each step it rolls
# the estimate forward with the transmitter's model (the prior), overwrites
# whatever coordinates arrived (the posterior), and, with a delay of d
# steps, replays the last d actions to bring the estimate to the present.
#
# The transmitter learns every loss outcome through ACKs, so it can run an
# identical copy of the receiver's estimator. That copy is what the
# compressed mode uses to decide which features to send.

# %%
import numpy as np

from hr3l.config import ExperimentConfig
from hr3l.orchestrator import make_world
from hr3l.transmitter import TxParams

cfg = ExperimentConfig(
    channel="ge925+delay2",
    mode="compressed",
    G=10,
    steps_per_round=1000,
    transmitter=TxParams(n_epochs=100),
)
world = make_world(cfg, seed=0)
world.verify_mirror = True  # raise if the copy and the receiver ever differ
world.trace = []

# %% [markdown]
# Two rounds: the first with an untrained model, the second after the
# transmitter has fitted its dynamics once and shipped the new snapshot.

# %%
for _ in range(2):
    row, _ = world.run_round()
    print({k: row[k] for k in ("round", "mean_reward", "tx_loss", "est_err", "losses")})

# %% [markdown]
# Estimation error over the second round, split by whether the packet sent
# at that step was erased.

# %%
second = world.trace[1000:]
err = np.array([np.sum((r["z_hat"] - r["z"]) ** 2) for r in second])
lost = np.array([r["lost"] for r in second])
print("steps with a lost packet:", lost.sum())
print("mean squared error, packet delivered:", err[~lost].mean())
print("mean squared error, packet lost:     ", err[lost].mean())
