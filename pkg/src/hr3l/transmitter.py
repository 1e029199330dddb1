"""Transmitter: learns the homomorphic successor-feature model and encodes states.

The model consists of a state encoder ``phi`` (with an EMA target copy), an
action encoder ``alpha``, a linear latent transition matrix ``M`` of shape
``(F + A, F)`` and a reward vector ``w`` of length ``F + A``. Only ``M`` and
``alpha`` are shipped to the receiver; ``phi`` never leaves this side.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .channel import CapacityExceeded, ChannelMessage
from .neural import AdamState, Mlp, TargetPair, adam_step_inplace, ema_update
from .receiver import LatentEstimator, _prior

FEATURE_BITS = 16


class EpisodeBoundaryCrossed(ValueError):
    pass


class InsufficientData(RuntimeError):
    pass


class DesyncDetected(AssertionError):
    pass


@dataclass
class TxParams:
    n_features: int = 50
    n_action_features: int = 8
    hidden: tuple = (128, 128)
    action_hidden: tuple = (64,)
    lr: float = 1e-4
    horizon: int = 5
    batch_size: int = 256
    n_epochs: int = 250
    buffer_size: int = 500_000
    rho: float = 0.99


# --------------------------------------------------------------------------
# model


@dataclass
class SfrModel:
    phi: Mlp
    phi_target: Mlp
    alpha: Mlp
    M: np.ndarray
    w: np.ndarray
    generation: int = 0

    @classmethod
    def init(cls, obs_dim: int, act_dim: int, params: TxParams | None = None, seed: int = 0) -> "SfrModel":
        p = params or TxParams()
        rng = np.random.default_rng(seed)
        F, A = p.n_features, p.n_action_features
        phi = Mlp([obs_dim, *p.hidden, F], rng=rng)
        alpha = Mlp([act_dim, *p.action_hidden, A], rng=rng)
        # identity dynamics: an untrained receiver holds its last estimate
        M = np.vstack([np.eye(F), np.zeros((A, F))])
        return cls(phi, phi.copy(), alpha, M, np.zeros(F + A))

    @property
    def F(self) -> int:
        return self.M.shape[1]

    @property
    def A(self) -> int:
        return self.M.shape[0] - self.M.shape[1]

    def params(self) -> list:
        return [*self.phi.params, *self.alpha.params, self.M, self.w]

    def set_params(self, params) -> None:
        n_phi, n_alpha = len(self.phi.params), len(self.alpha.params)
        self.phi.params = list(params[:n_phi])
        self.alpha.params = list(params[n_phi:n_phi + n_alpha])
        self.M, self.w = params[n_phi + n_alpha], params[n_phi + n_alpha + 1]


def embed_state(m: SfrModel, obs) -> np.ndarray:
    return m.phi(obs)


def embed_action(m: SfrModel, a) -> np.ndarray:
    return m.alpha(a)


def predict_next(m: SfrModel, z_s, z_a) -> np.ndarray:
    return np.concatenate([z_s, z_a], axis=-1) @ m.M


def predict_reward(m: SfrModel, z_s, z_a):
    return np.concatenate([z_s, z_a], axis=-1) @ m.w


def rollout_loss(m: SfrModel, states, actions, rewards, episodes=None):
    """Multi-step latent rollout loss and its gradient w.r.t. ``m.params()``.

    ``states`` has shape ``(B, H+1, obs_dim)`` (or ``(H+1, obs_dim)`` for a
    single trajectory), ``actions`` ``(B, H, act_dim)``, ``rewards``
    ``(B, H)``. Step 1 starts from ``phi(s_1)``; later steps feed the
    predicted features back through ``M``. Targets ``phi_target(s_{h+1})``
    are constants. The loss is averaged over the batch and summed over h.
    """
    states = np.asarray(states, dtype=np.float64)
    actions = np.asarray(actions, dtype=np.float64)
    rewards = np.asarray(rewards, dtype=np.float64)
    if states.ndim == 2:
        states, actions, rewards = states[None], actions[None], rewards[None]
        if episodes is not None:
            episodes = np.asarray(episodes)[None]
    if episodes is not None and np.any(np.asarray(episodes) != np.asarray(episodes)[:, :1]):
        raise EpisodeBoundaryCrossed("trajectory spans an episode reset")
    B, H1, obs_dim = states.shape
    H = H1 - 1
    F = m.F
    M, w = m.M, m.w

    zs1, phi_cache = m.phi.forward(states[:, 0])
    targets = m.phi_target(states[:, 1:].reshape(B * H, obs_dim)).reshape(B, H, F)
    za_flat, alpha_cache = m.alpha.forward(actions.reshape(B * H, -1))
    za = za_flat.reshape(B, H, -1)

    zsa, preds, feat_err, rew_err = [], [], [], []
    zs = zs1
    loss = 0.0
    for h in range(H):
        x = np.concatenate([zs, za[:, h]], axis=1)
        pred = x @ M
        r_hat = x @ w
        fe = pred - targets[:, h]
        re = r_hat - rewards[:, h]
        loss += float(np.sum(fe * fe) + np.sum(re * re))
        zsa.append(x)
        feat_err.append(fe)
        rew_err.append(re)
        zs = pred
    loss /= B

    dM = np.zeros_like(M)
    dw = np.zeros_like(w)
    dza = np.zeros_like(za)
    carry = np.zeros((B, F))
    for h in reversed(range(H)):
        dpred = 2.0 * feat_err[h] / B + carry
        dr = 2.0 * rew_err[h] / B
        dM += zsa[h].T @ dpred
        dw += zsa[h].T @ dr
        dx = dpred @ M.T + dr[:, None] * w[None, :]
        carry = dx[:, :F]
        dza[:, h] = dx[:, F:]
    phi_grads, _ = m.phi.backward(phi_cache, carry, input_grad=False)
    alpha_grads, _ = m.alpha.backward(alpha_cache, dza.reshape(B * H, -1), input_grad=False)
    return loss, [*phi_grads, *alpha_grads, dM, dw]


class TransitionDataset:
    """Ring buffer of transitions with episode ids and global step stamps."""

    def __init__(self, obs_dim: int, act_dim: int, capacity: int = 500_000):
        self.capacity = capacity
        self.obs = np.zeros((capacity, obs_dim))
        self.next_obs = np.zeros((capacity, obs_dim))
        self.act = np.zeros((capacity, act_dim))
        self.rew = np.zeros(capacity)
        self.episode = np.zeros(capacity, dtype=np.int64)
        self.step = np.zeros(capacity, dtype=np.int64)
        self.size = 0
        self.pos = 0
        self.n_added = 0
        self._starts_cache: dict = {}

    def __len__(self):
        return self.size

    def add(self, obs, act, rew, next_obs, episode: int, step: int) -> None:
        i = self.pos
        self.obs[i], self.act[i], self.rew[i], self.next_obs[i] = obs, act, rew, next_obs
        self.episode[i], self.step[i] = episode, step
        self.pos = (self.pos + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        self.n_added += 1
        self._starts_cache.clear()

    def _physical(self, logical):
        return (self.pos - self.size + np.asarray(logical)) % self.capacity

    def valid_starts(self, horizon: int) -> np.ndarray:
        """Logical indices whose next `horizon` records are one consecutive stretch."""
        if horizon in self._starts_cache:
            return self._starts_cache[horizon]
        n = self.size - horizon + 1
        if n <= 0:
            starts = np.zeros(0, dtype=np.int64)
        else:
            first = self._physical(np.arange(n))
            last = self._physical(np.arange(n) + horizon - 1)
            ok = (self.episode[first] == self.episode[last]) & (self.step[last] - self.step[first] == horizon - 1)
            starts = np.nonzero(ok)[0]
        self._starts_cache[horizon] = starts
        return starts

    def trajectory(self, start: int, horizon: int):
        """States ``(H+1, obs)``, actions ``(H, act)``, rewards ``(H,)`` from a logical start."""
        idx = self._physical(np.arange(start, start + horizon))
        eps = self.episode[idx]
        steps = self.step[idx]
        if np.any(eps != eps[0]) or np.any(np.diff(steps) != 1):
            raise EpisodeBoundaryCrossed(f"records {start}..{start + horizon - 1} cross a reset")
        states = np.vstack([self.obs[idx], self.next_obs[idx[-1]][None]])
        return states, self.act[idx], self.rew[idx]

    def sample(self, rng: np.random.Generator, batch_size: int, horizon: int):
        starts = self.valid_starts(horizon)
        if starts.size == 0:
            raise InsufficientData(f"no {horizon}-step trajectory in {self.size} records")
        pick = starts[rng.integers(0, starts.size, size=batch_size)]
        idx = self._physical(pick[:, None] + np.arange(horizon)[None, :])
        states = np.concatenate([self.obs[idx], self.next_obs[idx[:, -1]][:, None]], axis=1)
        return states, self.act[idx], self.rew[idx]


# --------------------------------------------------------------------------
# snapshot shipped to the receiver


@dataclass(frozen=True)
class ModelSnapshot:
    generation: int
    M: np.ndarray
    alpha: Mlp


_ACT_CODES = {"identity": 0, "relu": 1, "tanh": 2}
_ACT_NAMES = {v: k for k, v in _ACT_CODES.items()}
_MAGIC = b"HR3S"


def make_snapshot(m: SfrModel) -> ModelSnapshot:
    return ModelSnapshot(m.generation, m.M.copy(), m.alpha.copy())


def serialize_snapshot(snap: ModelSnapshot) -> bytes:
    """Shape header followed by every parameter as little-endian float64.

    Header: magic, generation, number of alpha layers, alpha layer dims,
    alpha activation codes, then the ``M`` shape.
    """
    alpha = snap.alpha
    dims = alpha.layer_dims
    header = struct.pack("<4sqq", _MAGIC, snap.generation, len(alpha.activations))
    header += struct.pack(f"<{len(dims)}q", *dims)
    header += struct.pack(f"<{len(alpha.activations)}q", *(_ACT_CODES[a] for a in alpha.activations))
    header += struct.pack("<qq", *snap.M.shape)
    flat = np.concatenate([snap.M.reshape(-1), *(p.reshape(-1) for p in alpha.params)])
    return header + flat.astype("<f8").tobytes()


def deserialize_snapshot(blob: bytes) -> ModelSnapshot:
    magic, generation, n_layers = struct.unpack_from("<4sqq", blob, 0)
    if magic != _MAGIC:
        raise ValueError("not a model snapshot")
    off = struct.calcsize("<4sqq")
    dims = list(struct.unpack_from(f"<{n_layers + 1}q", blob, off))
    off += 8 * (n_layers + 1)
    acts = [_ACT_NAMES[c] for c in struct.unpack_from(f"<{n_layers}q", blob, off)]
    off += 8 * n_layers
    rows, cols = struct.unpack_from("<qq", blob, off)
    off += 16
    flat = np.frombuffer(blob, dtype="<f8", offset=off).astype(np.float64)
    M = flat[: rows * cols].reshape(rows, cols).copy()
    pos = rows * cols
    alpha = Mlp(dims, acts)
    params = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        params.append(flat[pos:pos + fan_in * fan_out].reshape(fan_in, fan_out).copy())
        pos += fan_in * fan_out
        params.append(flat[pos:pos + fan_out].copy())
        pos += fan_out
    if pos != flat.size:
        raise ValueError("snapshot payload length does not match its header")
    alpha.params = params
    return ModelSnapshot(generation, M, alpha)


# --------------------------------------------------------------------------
# wire encoding


class Quantizer16:
    """binary16 round-to-nearest-even; ``enabled=False`` passes float64 through."""

    def __init__(self, enabled: bool = True):
        self.enabled = enabled

    def quantize(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if not self.enabled:
            return x.copy()
        fmax = float(np.finfo(np.float16).max)
        return np.clip(x, -fmax, fmax).astype(np.float16)

    @staticmethod
    def dequantize(q) -> np.ndarray:
        return np.asarray(q).astype(np.float64)


def compute_mask(z, z_hat, G: int) -> np.ndarray:
    """Boolean mask selecting the G largest squared prediction errors.

    Ties go to the lowest index.
    """
    z = np.asarray(z, dtype=np.float64)
    F = z.size
    if not 1 <= G <= F:
        raise ValueError(f"G={G} outside [1, {F}]")
    e = (z - np.asarray(z_hat, dtype=np.float64)) ** 2
    order = np.argsort(-e, kind="stable")
    mask = np.zeros(F, dtype=bool)
    mask[order[:G]] = True
    return mask


def message_bits(n_features: int, n_sent: int, mode: str) -> int:
    if mode == "full":
        return FEATURE_BITS * n_features
    if mode == "compressed":
        return FEATURE_BITS * n_sent + n_features
    raise ValueError(f"unknown mode {mode!r}")


def encode_message(
    z,
    mask,
    q: Quantizer16,
    mode: str,
    t: int,
    n: int,
    capacity_bits: int | None = None,
    episode: int = 0,
) -> ChannelMessage:
    mask = np.asarray(mask, dtype=bool)
    if mode == "full" and not mask.all():
        raise ValueError("full mode sends every feature")
    idx = np.flatnonzero(mask)
    size = message_bits(mask.size, idx.size, mode)
    if capacity_bits is not None and size > capacity_bits:
        raise CapacityExceeded(f"{size} bits > capacity {capacity_bits}")
    values = q.quantize(np.asarray(z)[idx])
    return ChannelMessage(idx, values, mask, t, n, size, episode)


# --------------------------------------------------------------------------
# mirror of the receiver's belief


class MirrorEstimator(LatentEstimator):
    """Replica of the receiver estimator, advanced at send time.

    Loss outcomes are known immediately through per-message ACK/NACK, so the
    anchor for step t is settled when message t is sent; the receiver only
    settles it d steps later, with identical arithmetic.
    """

    def __init__(self, n_features: int, delay: int = 0):
        super().__init__(n_features, delay)
        self.anchors: dict[int, np.ndarray] = {}

    def begin_episode(self, t0: int) -> None:
        super().begin_episode(t0)
        self.anchors.clear()

    def commit(self, k, base, msg=None):
        z = base if msg is None else np.where(msg.mask, msg.dense(), base)
        self.anchor, self.anchor_time = z, k
        self.anchors[k] = z
        # the receiver lags d steps, keep enough history to replay its view
        horizon = k - self.d
        while self.history and self.history[0][0] < horizon:
            self.history.popleft()
        for tt in [tt for tt in self.anchors if tt < horizon]:
            del self.anchors[tt]
        for tt in [tt for tt in self._gen_at if tt < horizon]:
            del self._gen_at[tt]
        return z

    def receiver_view(self, t: int) -> np.ndarray:
        """The receiver's present estimate at step t, recomputed locally."""
        snap = self.snapshot()
        k = t - self.d
        if k >= self.episode_start:
            z, start = self.anchors[k], k
        else:
            z, start = np.zeros(self.F), self.episode_start
        for j in range(start, t):
            z = _prior(z, self._action_at(j), snap.M, snap.alpha)
        return z


def mirror_step(mir: MirrorEstimator, t: int, ack: bool, action_feedback, msg_sent, base=None) -> np.ndarray:
    """Advance the mirror for the message sent at `t`.

    `action_feedback` is a_{t-1} (None at an episode start); `ack` tells
    whether the message got through.
    """
    if action_feedback is not None:
        mir.record_action(t - 1, action_feedback)
    mir.mark_time(t)
    if base is None:
        base = mir.prior_for(t)
    return mir.commit(t, base, msg_sent if ack else None)


# --------------------------------------------------------------------------
# the transmitter unit


class Transmitter:
    def __init__(
        self,
        obs_dim: int,
        act_dim: int,
        params: TxParams | None = None,
        mode: str = "full",
        G: int | None = None,
        delay: int = 0,
        quantize: bool = True,
        capacity_bits: int | None = None,
        seed: int = 0,
        track_mirror: bool | None = None,
    ):
        self.hp = params or TxParams()
        seeds = np.random.SeedSequence(seed).spawn(2)
        self.model = SfrModel.init(obs_dim, act_dim, self.hp, seed=int(seeds[0].generate_state(1)[0]))
        self.rng = np.random.default_rng(seeds[1])
        self.opt = AdamState.like(self.model.params(), lr=self.hp.lr)
        self.dataset = TransitionDataset(obs_dim, act_dim, self.hp.buffer_size)
        self.mode = mode
        F = self.hp.n_features
        self.G = F if G is None else G
        if not 1 <= self.G <= F:
            raise ValueError(f"G={self.G} outside [1, {F}]")
        self.quantizer = Quantizer16(quantize)
        self.capacity_bits = capacity_bits
        self.track_mirror = (mode == "compressed") if track_mirror is None else track_mirror
        self.mirror = MirrorEstimator(F, delay)
        self.mirror.load_snapshot(self.snapshot())
        self._pending_base = None

    def snapshot(self) -> ModelSnapshot:
        return make_snapshot(self.model)

    def begin_episode(self, t0: int) -> None:
        self.mirror.begin_episode(t0)

    def feedback_action(self, t: int, action) -> None:
        """Per-step uplink feedback of a_t."""
        if self.track_mirror:
            self.mirror.record_action(t, action)

    def encode(self, obs, t: int, episode: int = 0):
        """Embed `obs` and build the message for step `t`; returns ``(msg, z)``."""
        z = embed_state(self.model, obs)
        F = z.size
        if self.track_mirror:
            self.mirror.mark_time(t)
            self._pending_base = self.mirror.prior_for(t)
        if self.mode == "compressed" and self.G < F:
            mask = compute_mask(z, self._pending_base, self.G)
        else:
            mask = np.ones(F, dtype=bool)
        msg = encode_message(z, mask, self.quantizer, self.mode, t, self.model.generation,
                             self.capacity_bits, episode)
        return msg, z

    def on_send(self, msg: ChannelMessage, lost: bool) -> None:
        """ACK/NACK for the message just sent."""
        if self.track_mirror:
            self.mirror.commit(msg.send_time, self._pending_base, None if lost else msg)

    def ingest(self, states, next_states, actions, rewards, episodes, steps) -> None:
        for rec in zip(states, actions, rewards, next_states, episodes, steps):
            self.dataset.add(*rec)

    def train_round(self, n_epochs: int | None = None) -> float:
        """Adam steps on sampled H-step trajectories, one EMA target update, new generation.

        Returns the mean training loss over the round (nan with 0 epochs).
        """
        hp = self.hp
        n_epochs = hp.n_epochs if n_epochs is None else n_epochs
        if n_epochs > 0 and self.dataset.valid_starts(hp.horizon).size == 0:
            raise InsufficientData("dataset holds no complete trajectory")
        losses = []
        m = self.model
        for _ in range(n_epochs):
            states, actions, rewards = self.dataset.sample(self.rng, hp.batch_size, hp.horizon)
            loss, grads = rollout_loss(m, states, actions, rewards)
            adam_step_inplace(m.params(), grads, self.opt)
            losses.append(loss)
        if n_epochs > 0:
            tp = ema_update(TargetPair(m.phi.params, m.phi_target.params, hp.rho))
            m.phi_target.params = tp.target
            m.generation += 1
        return float(np.mean(losses)) if losses else float("nan")
