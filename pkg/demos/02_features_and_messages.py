# %% [markdown]
# # Features, masks and what goes on the wire
#
# The transmitter embeds each observation into F features with a small
# network `phi`. A linear map `M` predicts the next feature vector from the
# current one and an action embedding `alpha(a)`. In compressed mode only
# the G features the receiver would get most wrong are sent.

# %%
import numpy as np

from hr3l.envs import Env
from hr3l.transmitter import (
    Quantizer16,
    SfrModel,
    TxParams,
    compute_mask,
    embed_action,
    embed_state,
    encode_message,
    message_bits,
    predict_next,
)

env = Env("pendulum", seed=0)
obs = env.reset()
model = SfrModel.init(env.obs_dim, env.act_dim, TxParams(), seed=0)
z = embed_state(model, obs)
print("observation", obs, "-> features", z.shape)

# %% [markdown]
# Before training `M` is the identity on the state block, so the model
# predicts "nothing changes".

# %%
z_next = predict_next(model, z, embed_action(model, np.array([0.5])))
print("prediction equals input:", np.array_equal(z_next, z))

# %% [markdown]
# The mask picks the G largest squared errors between the true features and
# the receiver's prior, breaking ties towards the lower index.

# %%
prior = z + np.random.default_rng(1).normal(scale=0.1, size=z.size)
mask = compute_mask(z, prior, G=8)
print("sent indices:", np.flatnonzero(mask))

# %% [markdown]
# Values travel as IEEE half precision. A message costs 16 bits per sent
# value, plus an F-bit mask in compressed mode.

# %%
q = Quantizer16()
print("0.1 on the wire:", float(q.quantize(0.1)))
msg = encode_message(z, mask, q, "compressed", t=0, n=model.generation)
print("compressed size:", msg.size_bits, "bits =", message_bits(50, 8, "compressed"))
print("full size:", message_bits(50, 50, "full"), "bits")
print("F=512 full at 100 Hz:", message_bits(512, 512, "full") * 100 / 1e6, "Mb/s")
