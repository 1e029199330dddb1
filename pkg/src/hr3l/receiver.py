"""Receiver side: latent state estimation under loss/delay and a PPO learner.

The estimator keeps an *anchor*, the best estimate of the feature vector at
time ``t - d`` given every message sent up to that time. Each step the anchor
is advanced with the model (prior), overwritten at the received coordinates
(posterior), and then replayed through the last ``d`` actions to reach the
present. The transmitter runs the very same code on its side to mirror the
receiver's belief, so everything here is deterministic in its inputs.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .neural import AdamState, Mlp, adam_step_inplace, clip_grad_norm

LOG_STD_MIN, LOG_STD_MAX = -5.0, 2.0
LOG_2PI = float(np.log(2.0 * np.pi))


class HistoryUnderflow(RuntimeError):
    pass


class EmptyBuffer(RuntimeError):
    pass


class SnapshotMissing(RuntimeError):
    pass


# --------------------------------------------------------------------------
# latent estimation


@dataclass(frozen=True)
class LatentEstimate:
    z: np.ndarray
    t: int = 0
    generation: int = 0


def _prior(z, a, M, alpha) -> np.ndarray:
    za = alpha(np.asarray(a, dtype=np.float64))
    return np.concatenate([z, za]) @ M


def prior_update(est: LatentEstimate, a_prev, M, alpha) -> LatentEstimate:
    """Propagate the estimate one step: (z || alpha(a)) M."""
    return LatentEstimate(_prior(est.z, a_prev, M, alpha), est.t + 1, est.generation)


def posterior_merge(est: LatentEstimate, z_rx, mask) -> LatentEstimate:
    """Overwrite the masked coordinates with the received values."""
    mask = np.asarray(mask, dtype=bool)
    return LatentEstimate(np.where(mask, np.asarray(z_rx, dtype=np.float64), est.z), est.t, est.generation)


def replay_to_present(est: LatentEstimate, actions, M, alpha, d: int | None = None) -> LatentEstimate:
    """Apply the prior update over `actions` (oldest first).

    With `d` given, the last `d` actions are used and fewer than `d` stored
    actions is an error.
    """
    actions = list(actions)
    if d is not None:
        if len(actions) < d:
            raise HistoryUnderflow(f"need {d} actions, have {len(actions)}")
        actions = actions[len(actions) - d:] if d else []
    for a in actions:
        est = prior_update(est, a, M, alpha)
    return est


class LatentEstimator:
    """Anchor-based estimator shared by the receiver and the transmitter mirror.

    Times are global step indices. Snapshots are looked up by the generation
    that was active at the time being estimated, which keeps both sides in
    lockstep across round boundaries.
    """

    def __init__(self, n_features: int, delay: int = 0):
        self.F = n_features
        self.d = delay
        self.snapshots: dict = {}
        self.generation: int | None = None
        self.episode_start = 0
        self.anchor: np.ndarray | None = None
        self.anchor_time: int | None = None
        # (time, action) pairs from the anchor time onwards
        self.history: deque = deque()
        self._gen_at: dict[int, int] = {}

    def load_snapshot(self, snap) -> None:
        self.snapshots[snap.generation] = snap
        self.generation = snap.generation
        # keep only what an anchor d steps behind can still need
        keep = {snap.generation, *self._gen_at.values()}
        for g in [g for g in self.snapshots if g not in keep]:
            del self.snapshots[g]

    def snapshot(self, generation: int | None = None):
        g = self.generation if generation is None else generation
        try:
            return self.snapshots[g]
        except KeyError:
            raise SnapshotMissing(f"generation {g} not delivered") from None

    def begin_episode(self, t0: int) -> None:
        self.episode_start = t0
        self.anchor = None
        self.anchor_time = None
        self.history.clear()
        self._gen_at.clear()

    def mark_time(self, t: int) -> None:
        """Record the generation active at step `t`."""
        if self.generation is None:
            raise SnapshotMissing("no model snapshot delivered yet")
        self._gen_at[t] = self.generation

    def record_action(self, t: int, action) -> None:
        self.history.append((t, np.array(action, dtype=np.float64)))

    def _action_at(self, t: int):
        for tt, a in self.history:
            if tt == t:
                return a
        raise HistoryUnderflow(f"action at step {t} not stored")

    def prior_for(self, k: int) -> np.ndarray:
        """Estimate of time `k` before merging the message sent at `k`."""
        if k == self.episode_start:
            return np.zeros(self.F)
        if self.anchor_time != k - 1:
            raise RuntimeError(f"anchor at {self.anchor_time}, cannot step to {k}")
        snap = self.snapshot(self._gen_at[k])
        return _prior(self.anchor, self._action_at(k - 1), snap.M, snap.alpha)

    def commit(self, k: int, base: np.ndarray, msg=None) -> np.ndarray:
        z = base
        if msg is not None:
            z = np.where(msg.mask, msg.dense(), base)
        self.anchor, self.anchor_time = z, k
        # drop what no future step can need
        while self.history and self.history[0][0] < k:
            self.history.popleft()
        for tt in [tt for tt in self._gen_at if tt < k]:
            del self._gen_at[tt]
        return z

    def resolve(self, k: int, msg=None) -> np.ndarray:
        return self.commit(k, self.prior_for(k), msg)

    def present(self, t: int) -> np.ndarray:
        """Current-time estimate: anchor replayed through the stored actions."""
        snap = self.snapshot()
        if self.anchor is None:
            z, start = np.zeros(self.F), self.episode_start
        else:
            z, start = self.anchor, self.anchor_time
        for k in range(start, t):
            z = _prior(z, self._action_at(k), snap.M, snap.alpha)
        return z


# --------------------------------------------------------------------------
# PPO


def squash_log_correction(u: np.ndarray) -> np.ndarray:
    """log(1 - tanh(u)^2), computed stably."""
    return 2.0 * (np.log(2.0) - u - np.logaddexp(0.0, -2.0 * u))


def gaussian_log_prob(u, mean, log_std) -> np.ndarray:
    z = (u - mean) / np.exp(log_std)
    return np.sum(-0.5 * z * z - log_std - 0.5 * LOG_2PI, axis=-1)


def gae_compute(rewards, values, dones, bootstrap_value: float, gamma: float, lam: float):
    """Generalized advantage estimation, backward over one rollout.

    ``dones[t]`` marks that the episode ended after step ``t``; time-limit
    bootstrapping is expected to be folded into ``rewards`` by the caller.
    Returns ``(advantages, returns)`` with ``returns = advantages + values``.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=bool)
    n = rewards.size
    adv = np.zeros(n)
    last = 0.0
    for t in reversed(range(n)):
        if dones[t]:
            next_v, nonterminal = 0.0, 0.0
        else:
            next_v = bootstrap_value if t == n - 1 else values[t + 1]
            nonterminal = 1.0
        delta = rewards[t] + gamma * next_v - values[t]
        last = delta + gamma * lam * nonterminal * last
        adv[t] = last
    return adv, adv + values


@dataclass
class RolloutBuffer:
    obs: list = field(default_factory=list)
    u: list = field(default_factory=list)
    log_prob: list = field(default_factory=list)
    value: list = field(default_factory=list)
    reward: list = field(default_factory=list)
    done: list = field(default_factory=list)
    generation: list = field(default_factory=list)

    def add(self, obs, u, log_prob, value, reward, done, generation=0):
        self.obs.append(np.asarray(obs, dtype=np.float64))
        self.u.append(np.asarray(u, dtype=np.float64))
        self.log_prob.append(float(log_prob))
        self.value.append(float(value))
        self.reward.append(float(reward))
        self.done.append(bool(done))
        self.generation.append(int(generation))

    def __len__(self):
        return len(self.reward)

    def clear(self):
        for lst in (self.obs, self.u, self.log_prob, self.value, self.reward, self.done, self.generation):
            lst.clear()


@dataclass
class PpoParams:
    lr: float = 3e-4
    n_steps: int = 4096
    batch_size: int = 256
    n_epochs: int = 10
    clip: float = 0.2
    gamma: float = 0.99
    gae_lambda: float = 0.95
    vf_coef: float = 0.5
    ent_coef: float = 0.0
    max_grad_norm: float = 0.5
    hidden: tuple = (256, 256)
    log_std_init: float = 0.0


def clipped_surrogate(ratio, adv, clip: float):
    """Per-sample PPO objective min(r A, clip(r, 1-eps, 1+eps) A)."""
    return np.minimum(ratio * adv, np.clip(ratio, 1.0 - clip, 1.0 + clip) * adv)


class PpoAgent:
    """Diagonal-Gaussian PPO with tanh squashing and a separate value net."""

    def __init__(self, in_dim: int, act_dim: int, params: PpoParams | None = None, seed: int = 0):
        self.hp = params or PpoParams()
        self.in_dim, self.act_dim = in_dim, act_dim
        seeds = np.random.SeedSequence(seed).spawn(3)
        init_rng = np.random.default_rng(seeds[0])
        hid = list(self.hp.hidden)
        self.policy = Mlp([in_dim, *hid, act_dim], hidden="tanh", rng=init_rng, out_scale=0.01)
        self.value_net = Mlp([in_dim, *hid, 1], hidden="tanh", rng=init_rng)
        self.log_std = np.full(act_dim, self.hp.log_std_init)
        self.opt = AdamState.like(self.params, lr=self.hp.lr)
        self.rng = np.random.default_rng(seeds[1])
        self.shuffle_rng = np.random.default_rng(seeds[2])
        self.buffer = RolloutBuffer()

    @property
    def params(self) -> list:
        return [*self.policy.params, self.log_std, *self.value_net.params]

    def set_params(self, params) -> None:
        n = len(self.policy.params)
        self.policy.params = list(params[:n])
        self.log_std = np.clip(params[n], LOG_STD_MIN, LOG_STD_MAX)
        self.value_net.params = list(params[n + 1:])

    def mean(self, x) -> np.ndarray:
        return self.policy(x)

    def value(self, x) -> float:
        return float(self.value_net(x)[0])

    def act(self, x, deterministic: bool = False):
        """Sample an action; returns ``(action, u, log_prob, value)``.

        `u` is the pre-squash Gaussian sample; `log_prob` is the density of
        the squashed action.
        """
        x = np.asarray(x, dtype=np.float64)
        mu = self.policy(x)
        log_std = np.clip(self.log_std, LOG_STD_MIN, LOG_STD_MAX)
        if deterministic:
            u = mu
        else:
            u = mu + np.exp(log_std) * self.rng.standard_normal(self.act_dim)
        logp = gaussian_log_prob(u, mu, log_std) - np.sum(squash_log_correction(u))
        return np.tanh(u), u, float(logp), self.value(x)

    def loss_and_grads(self, obs, u, old_logp, adv, returns):
        """PPO loss on one minibatch and its gradient w.r.t. :attr:`params`."""
        B = obs.shape[0]
        hp = self.hp
        mu, pcache = self.policy.forward(obs)
        log_std = np.clip(self.log_std, LOG_STD_MIN, LOG_STD_MAX)
        std = np.exp(log_std)
        # the tanh correction depends only on u and cancels in the ratio
        logp = gaussian_log_prob(u, mu, log_std) - np.sum(squash_log_correction(u), axis=-1)
        ratio = np.exp(logp - old_logp)
        surr1 = ratio * adv
        surr2 = np.clip(ratio, 1.0 - hp.clip, 1.0 + hp.clip) * adv
        pg_loss = -np.mean(np.minimum(surr1, surr2))
        v, vcache = self.value_net.forward(obs)
        v = v[:, 0]
        v_loss = np.mean((returns - v) ** 2)
        entropy = float(np.sum(log_std + 0.5 * (1.0 + LOG_2PI)))
        loss = pg_loss + hp.vf_coef * v_loss - hp.ent_coef * entropy

        active = surr1 <= surr2
        dlogp = -(active * ratio * adv) / B
        diff = (u - mu) / std
        dmu = dlogp[:, None] * diff / std
        dlog_std = (dlogp[:, None] * (diff * diff - 1.0)).sum(axis=0) - hp.ent_coef
        pgrads, _ = self.policy.backward(pcache, dmu, input_grad=False)
        dv = hp.vf_coef * 2.0 * (v - returns) / B
        vgrads, _ = self.value_net.backward(vcache, dv[:, None], input_grad=False)
        info = {"pg_loss": pg_loss, "v_loss": v_loss, "clip_frac": float(np.mean(np.abs(ratio - 1) > hp.clip))}
        return loss, [*pgrads, dlog_std, *vgrads], info


def ppo_update(agent: PpoAgent, buf: RolloutBuffer | None = None, bootstrap_value: float = 0.0) -> dict:
    """Clipped-surrogate PPO over one round's buffer (agent updated in place)."""
    buf = agent.buffer if buf is None else buf
    if len(buf) == 0:
        raise EmptyBuffer("no transitions to learn from")
    if len(set(buf.generation)) > 1:
        raise RuntimeError("rollout buffer mixes model generations")
    hp = agent.hp
    obs = np.stack(buf.obs)
    u = np.stack(buf.u)
    old_logp = np.asarray(buf.log_prob)
    adv, returns = gae_compute(buf.reward, buf.value, buf.done, bootstrap_value, hp.gamma, hp.gae_lambda)
    adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    n = len(buf)
    info: dict = {}
    for _ in range(hp.n_epochs):
        perm = agent.shuffle_rng.permutation(n)
        for start in range(0, n, hp.batch_size):
            idx = perm[start:start + hp.batch_size]
            _, grads, info = agent.loss_and_grads(obs[idx], u[idx], old_logp[idx], adv[idx], returns[idx])
            grads, _ = clip_grad_norm(grads, hp.max_grad_norm)
            adam_step_inplace(agent.params, grads, agent.opt)
            np.clip(agent.log_std, LOG_STD_MIN, LOG_STD_MAX, out=agent.log_std)
    return info


def round_reset(agent: PpoAgent) -> PpoAgent:
    agent.buffer.clear()
    return agent
