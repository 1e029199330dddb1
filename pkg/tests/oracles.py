"""Independent reference implementations used by several test modules."""
import numpy as np

from hr3l.channel import ChannelMessage
from hr3l.neural import Mlp
from hr3l.receiver import LatentEstimator
from hr3l.transmitter import ModelSnapshot


def mlp_eval(net: Mlp, x):
    h = np.asarray(x, dtype=float)
    for i, act in enumerate(net.activations):
        h = h @ net.params[2 * i] + net.params[2 * i + 1]
        if act == "relu":
            h = np.where(h > 0, h, 0.0)
        elif act == "tanh":
            h = np.tanh(h)
    return h


def random_snapshot(rng, gen, F, A, act_dim=1):
    alpha = Mlp([act_dim, 6, A], hidden=str(rng.choice(["relu", "tanh"])), rng=rng)
    M = rng.normal(scale=1.0 / np.sqrt(F + A), size=(F + A, F))
    return ModelSnapshot(gen, M, alpha)


def random_case(rng, T=None, d=None):
    """A random estimator scenario: snapshots, switch times, actions, messages, losses."""
    F = int(rng.integers(1, 6))
    A = int(rng.integers(1, 3))
    d = int(rng.integers(0, 4)) if d is None else d
    T = int(rng.integers(1, 25)) if T is None else T
    n_gen = int(rng.integers(1, 4))
    snaps = [random_snapshot(rng, g, F, A) for g in range(n_gen)]
    switch = {0: 0}
    for g in range(1, n_gen):
        switch[int(rng.integers(1, T + 1))] = g
    actions = rng.uniform(-1, 1, size=(T, 1))
    msgs = []
    for k in range(T):
        z = rng.normal(size=F)
        mask = rng.random(F) < rng.random()
        idx = np.flatnonzero(mask)
        msgs.append(ChannelMessage(idx, z[idx], mask, k, 0, 0))
    lost = rng.random(T) < rng.random()
    return dict(F=F, d=d, T=T, snaps=snaps, switch=switch, actions=actions, msgs=msgs, lost=lost)


def run_incremental(case):
    """Drive the estimator the way the receiver loop does."""
    rx = LatentEstimator(case["F"], case["d"])
    out = []
    for t in range(case["T"]):
        if t in case["switch"]:
            rx.load_snapshot(case["snaps"][case["switch"][t]])
        rx.mark_time(t)
        if t > 0:
            rx.record_action(t - 1, case["actions"][t - 1])
        k = t - case["d"]
        if k >= 0:
            rx.resolve(k, None if case["lost"][k] else case["msgs"][k])
        out.append(rx.present(t))
    return np.array(out)


def run_bruteforce(case):
    """Recompute every estimate from scratch: prior chain, merges, replay."""
    F, d, T = case["F"], case["d"], case["T"]
    gen_at, g = [], None
    for t in range(T):
        g = case["switch"].get(t, g)
        gen_at.append(g)

    def prior(z, a, snap):
        return np.concatenate([z, mlp_eval(snap.alpha, a)]) @ snap.M

    def settled(k):
        z = np.zeros(F)
        for j in range(k + 1):
            if j > 0:
                z = prior(z, case["actions"][j - 1], case["snaps"][gen_at[j]])
            if not case["lost"][j]:
                m = case["msgs"][j]
                z = z.copy()
                z[m.indices] = m.values
        return z

    out = []
    for t in range(T):
        k = t - d
        z, start = (settled(k), k) if k >= 0 else (np.zeros(F), 0)
        for j in range(start, t):
            z = prior(z, case["actions"][j], case["snaps"][gen_at[t]])
        out.append(z)
    return np.array(out)
