# %% [markdown]
# # A bursty erasure channel
#
# The downlink is a two-state Markov chain. In the Good state packets get
# through; in the Bad state each one is erased with probability
# `p_loss_bad`. Bad spells last ten steps on average, so losses come in
# bursts rather than as independent coin flips.

# %%
import numpy as np

from hr3l.channel import Channel, analytic_loss_rate, channel_preset, stationary_bad_probability

cfg = channel_preset("ge925")
print(cfg)
print("stationary P(Bad) =", stationary_bad_probability(cfg))
print("analytic loss rate =", analytic_loss_rate(cfg))

# %% [markdown]
# Simulate a million steps and compare with the closed form.

# %%
lost = Channel(cfg, seed=0).loss_pattern(1_000_000)
print("empirical loss rate =", lost.mean())

# %% [markdown]
# Burstiness: the distribution of run lengths of consecutive erasures.
# An i.i.d. channel with the same rate would give runs of length one
# almost always.

# %%
edges = np.flatnonzero(np.diff(np.r_[0, lost.astype(np.int8), 0]))
runs = edges[1::2] - edges[::2]
for k in range(1, 8):
    print(f"run length {k}: {np.mean(runs == k):.3f}")
print("mean run length:", runs.mean())

iid = np.random.default_rng(0).random(1_000_000) < lost.mean()
edges = np.flatnonzero(np.diff(np.r_[0, iid.astype(np.int8), 0]))
print("i.i.d. mean run length:", (edges[1::2] - edges[::2]).mean())

# %% [markdown]
# Delay and capacity compose with the loss model: `ge925+delay2` holds each
# delivered packet for two steps, `cap:<bits>` rejects oversized packets.

# %%
print(channel_preset("ge925+delay2+cap:850"))
