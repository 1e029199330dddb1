"""Round-based training protocol and the two legacy PPO baselines.

Every run is one sequential timeline. Within a round the transmitter encodes
each state, the channel erases or delays the message, the receiver estimates
the latent state and acts. At the round boundary the receiver ships actions,
rewards and ACK flags back, updates its policy and clears its buffer; the
transmitter trains and ships a fresh ``(M, alpha)`` snapshot.
"""
from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field

import numpy as np

from .channel import Channel, ChannelMessage
from .config import ExperimentConfig
from .envs import Env
from .neural import tune_allocator
from .receiver import LatentEstimator, PpoAgent, _prior, ppo_update, round_reset
from .transmitter import (
    FEATURE_BITS,
    DesyncDetected,
    Quantizer16,
    Transmitter,
    deserialize_snapshot,
    serialize_snapshot,
)

CSV_HEADER = ("round", "steps", "mean_reward", "tx_loss", "est_err", "bits_sent", "losses", "seed")


@dataclass
class FeedbackPacket:
    actions: np.ndarray
    rewards: np.ndarray
    acks: np.ndarray

    def __post_init__(self):
        if not len(self.actions) == len(self.rewards) == len(self.acks):
            raise ValueError("feedback sequences differ in length")


@dataclass
class RunMetrics:
    seed: int = 0
    rows: list = field(default_factory=list)
    wall_clock: list = field(default_factory=list)

    def append(self, row: dict, seconds: float = 0.0) -> None:
        self.rows.append(row)
        self.wall_clock.append(seconds)

    def __len__(self):
        return len(self.rows)

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows], dtype=np.float64)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in self.rows:
            w.writerow([_fmt(r[k]) for k in CSV_HEADER])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv())

    @classmethod
    def from_csv(cls, text: str) -> "RunMetrics":
        reader = csv.DictReader(io.StringIO(text))
        if tuple(reader.fieldnames or ()) != CSV_HEADER:
            raise ValueError(f"unexpected CSV header {reader.fieldnames}")
        m = cls()
        for rec in reader:
            row = {k: (int(rec[k]) if k in ("round", "steps", "bits_sent", "losses", "seed") else float(rec[k]))
                   for k in CSV_HEADER}
            m.append(row)
            m.seed = row["seed"]
        return m


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(int(v))


def derive_seeds(seed: int) -> dict:
    """Independent env/channel/agent/transmitter seeds from one run seed."""
    children = np.random.SeedSequence(seed).spawn(4)
    names = ("env", "channel", "agent", "transmitter")
    return {n: int(c.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1)) for n, c in zip(names, children)}


class _World:
    """Shared scaffolding: env, channel, agent and the step loop."""

    def __init__(self, cfg: ExperimentConfig, seed: int, in_dim: int):
        self.cfg = cfg
        self.seed = seed
        self.seeds = derive_seeds(seed)
        self.env = Env(cfg.env, self.seeds["env"])
        self.channel = Channel(cfg.channel_config, self.seeds["channel"])
        self.d = cfg.channel_config.delay_steps
        self.agent = PpoAgent(in_dim, self.env.act_dim, cfg.receiver, seed=self.seeds["agent"])
        self.t = 0
        self.round = 0
        self.obs: np.ndarray | None = None
        self.episode_start = 0
        self.prev_action: np.ndarray | None = None
        self.metrics = RunMetrics(seed)
        self.trace: list | None = None  # optional per-step record for tests

    @property
    def T(self) -> int:
        return self.cfg.steps_per_round

    def _maybe_reset(self, done_last: bool) -> bool:
        if self.obs is None or done_last:
            self.obs = self.env.reset()
            self.episode_start = self.t
            self.prev_action = None
            self._on_episode_start()
            return True
        return False

    def _on_episode_start(self) -> None:
        pass

    def run_round(self):
        raise NotImplementedError


class Hr3lWorld(_World):
    def __init__(self, cfg: ExperimentConfig, seed: int = 0, track_mirror: bool | None = None):
        tx_p = cfg.transmitter
        super().__init__(cfg, seed, tx_p.n_features)
        ch = cfg.channel_config
        self.tx = Transmitter(
            self.env.obs_dim,
            self.env.act_dim,
            tx_p,
            mode=cfg.mode,
            G=cfg.G,
            delay=self.d,
            quantize=cfg.quantize,
            capacity_bits=ch.capacity_bits,
            seed=self.seeds["transmitter"],
            track_mirror=track_mirror,
        )
        self.rx = LatentEstimator(tx_p.n_features, self.d)
        self._ship_snapshot()
        self._done_last = False
        self.verify_mirror = False  # compare mirror and receiver every step

    def _ship_snapshot(self) -> None:
        snap = self.tx.snapshot()
        self.tx.mirror.load_snapshot(snap)
        # the receiver only ever sees the wire form
        self.rx.load_snapshot(deserialize_snapshot(serialize_snapshot(snap)))

    def _on_episode_start(self) -> None:
        self.tx.begin_episode(self.t)
        self.rx.begin_episode(self.t)

    def step(self) -> dict:
        """One environment step through the whole pipeline."""
        self._maybe_reset(self._done_last)
        t, obs = self.t, self.obs
        a_prev = self.prev_action
        episode = self.env.episode

        # transmitter
        if a_prev is not None:
            self.tx.feedback_action(t - 1, a_prev)
        msg, z = self.tx.encode(obs, t, episode)
        lost = self.channel.send(msg, t)
        self.tx.on_send(msg, lost)

        # receiver
        self.rx.mark_time(t)
        if a_prev is not None:
            self.rx.record_action(t - 1, a_prev)
        rx_msg = self.channel.deliver(t)
        if rx_msg is not None and rx_msg.episode != episode:
            rx_msg = None  # left over from the previous episode
        k = t - self.d
        if k >= self.episode_start:
            if rx_msg is not None and rx_msg.send_time != k:
                raise RuntimeError("delivery out of step with the fixed delay")
            self.rx.resolve(k, rx_msg)
        z_hat = self.rx.present(t)
        if self.verify_mirror and self.tx.track_mirror:
            view = self.tx.mirror.receiver_view(t)
            if not np.array_equal(view, z_hat):
                raise DesyncDetected(f"mirror and receiver disagree at step {t}")

        action, u, logp, value = self.agent.act(z_hat)
        next_obs, reward, done = self.env.step(action)
        if done:
            snap = self.rx.snapshot()
            reward_buf = reward + self.agent.hp.gamma * self.agent.value(_prior(z_hat, action, snap.M, snap.alpha))
        else:
            reward_buf = reward
        self.agent.buffer.add(z_hat, u, logp, value, reward_buf, done, self.rx.generation)

        rec = dict(t=t, obs=obs, next_obs=next_obs, action=action, reward=reward, lost=lost,
                   episode=episode, z=z, z_hat=z_hat, bits=msg.size_bits, done=done)
        if self.trace is not None:
            self.trace.append(rec)
        self.obs = next_obs
        self.prev_action = action
        self._done_last = done
        self.t += 1
        return rec

    def run_round(self):
        t0 = time.perf_counter()
        recs = [self.step() for _ in range(self.T)]
        fb = FeedbackPacket(
            np.array([r["action"] for r in recs]),
            np.array([r["reward"] for r in recs]),
            np.array([not r["lost"] for r in recs]),
        )
        last = recs[-1]
        if last["done"]:
            bootstrap = 0.0
        else:
            snap = self.rx.snapshot()
            bootstrap = self.agent.value(_prior(last["z_hat"], last["action"], snap.M, snap.alpha))
        ppo_update(self.agent, bootstrap_value=bootstrap)
        round_reset(self.agent)

        self.tx.ingest(
            [r["obs"] for r in recs], [r["next_obs"] for r in recs], fb.actions, fb.rewards,
            [r["episode"] for r in recs], [r["t"] for r in recs],
        )
        tx_loss = self.tx.train_round()
        self._ship_snapshot()

        self.round += 1
        row = dict(
            round=self.round,
            steps=self.t,
            mean_reward=float(np.mean(fb.rewards)),
            tx_loss=tx_loss,
            est_err=float(np.mean([np.sum((r["z_hat"] - r["z"]) ** 2) for r in recs])),
            bits_sent=int(sum(r["bits"] for r in recs)),
            losses=int(sum(r["lost"] for r in recs)),
            seed=self.seed,
        )
        self.metrics.append(row, time.perf_counter() - t0)
        return row, fb


class PpoWorld(_World):
    """Legacy PPO on raw observations with zero-order hold.

    With ``augment=True`` the last ``d`` actions are appended to the held
    observation.
    """

    def __init__(self, cfg: ExperimentConfig, seed: int = 0, augment: bool = False):
        env_probe = Env(cfg.env, 0)
        d = cfg.channel_config.delay_steps
        self.augment = augment
        in_dim = env_probe.obs_dim + (d * env_probe.act_dim if augment else 0)
        super().__init__(cfg, seed, in_dim)
        self.quantizer = Quantizer16(cfg.quantize)
        self.held: np.ndarray | None = None
        self.actions: list = []
        self._done_last = False

    @property
    def in_dim(self) -> int:
        return self.agent.in_dim

    def _on_episode_start(self) -> None:
        # the episode-initial observation is known at reset
        self.held = self.quantizer.dequantize(self.quantizer.quantize(self.obs))
        self.actions = [np.zeros(self.env.act_dim)] * self.d

    def policy_input(self) -> np.ndarray:
        if not self.augment or self.d == 0:
            return self.held
        return np.concatenate([self.held, *self.actions[-self.d:]])

    def step(self) -> dict:
        self._maybe_reset(self._done_last)
        t, obs, episode = self.t, self.obs, self.env.episode
        n_obs = obs.size
        msg = ChannelMessage(np.arange(n_obs), self.quantizer.quantize(obs), np.ones(n_obs, dtype=bool),
                             t, 0, FEATURE_BITS * n_obs, episode)
        lost = self.channel.send(msg, t)
        rx_msg = self.channel.deliver(t)
        if rx_msg is not None and rx_msg.episode == episode:
            self.held = rx_msg.dense()
        x = self.policy_input()

        action, u, logp, value = self.agent.act(x)
        next_obs, reward, done = self.env.step(action)
        reward_buf = reward + self.agent.hp.gamma * self.agent.value(x) if done else reward
        self.agent.buffer.add(x, u, logp, value, reward_buf, done, 0)
        self.actions.append(np.asarray(action, dtype=np.float64))
        if len(self.actions) > max(self.d, 1):
            self.actions.pop(0)

        rec = dict(t=t, obs=obs, next_obs=next_obs, action=action, reward=reward, lost=lost,
                   episode=episode, x=x, bits=msg.size_bits, done=done,
                   obs_err=float(np.sum((self.held - obs) ** 2)))
        if self.trace is not None:
            self.trace.append(rec)
        self.obs = next_obs
        self.prev_action = action
        self._done_last = done
        self.t += 1
        return rec

    def run_round(self):
        t0 = time.perf_counter()
        recs = [self.step() for _ in range(self.T)]
        fb = FeedbackPacket(
            np.array([r["action"] for r in recs]),
            np.array([r["reward"] for r in recs]),
            np.array([not r["lost"] for r in recs]),
        )
        bootstrap = 0.0 if recs[-1]["done"] else self.agent.value(self.policy_input())
        ppo_update(self.agent, bootstrap_value=bootstrap)
        round_reset(self.agent)
        self.round += 1
        row = dict(
            round=self.round,
            steps=self.t,
            mean_reward=float(np.mean(fb.rewards)),
            tx_loss=float("nan"),
            est_err=float(np.mean([r["obs_err"] for r in recs])),
            bits_sent=int(sum(r["bits"] for r in recs)),
            losses=int(sum(r["lost"] for r in recs)),
            seed=self.seed,
        )
        self.metrics.append(row, time.perf_counter() - t0)
        return row, fb


def make_world(cfg: ExperimentConfig, seed: int):
    tune_allocator()
    if cfg.method == "hr3l":
        return Hr3lWorld(cfg, seed)
    if cfg.method == "ppo_hold":
        return PpoWorld(cfg, seed, augment=False)
    if cfg.method == "ppo_delay_aug":
        return PpoWorld(cfg, seed, augment=True)
    raise ValueError(f"unknown method {cfg.method!r}")


def run_round(world):
    """Advance `world` by one round; returns ``(world, FeedbackPacket)``."""
    _, fb = world.run_round()
    return world, fb


def _run(cfg: ExperimentConfig, seed: int | None, progress=None) -> RunMetrics:
    seed = cfg.seeds[0] if seed is None else seed
    world = make_world(cfg, seed)
    for _ in range(cfg.n_rounds):
        row, _ = world.run_round()
        if progress is not None:
            progress(row)
    return world.metrics


def run_training(cfg: ExperimentConfig, seed: int | None = None, progress=None) -> RunMetrics:
    """Full HR3L training run for one seed (defaults to the first configured seed)."""
    if cfg.method != "hr3l":
        cfg = cfg.replace(method="hr3l")
    return _run(cfg, seed, progress)


def run_baseline_hold(cfg: ExperimentConfig, seed: int | None = None, progress=None) -> RunMetrics:
    return _run(cfg.replace(method="ppo_hold"), seed, progress)


def run_baseline_delay_augmented(cfg: ExperimentConfig, seed: int | None = None, progress=None) -> RunMetrics:
    return _run(cfg.replace(method="ppo_delay_aug"), seed, progress)


def run_experiment(cfg: ExperimentConfig, seed: int | None = None, progress=None) -> RunMetrics:
    """Dispatch on ``cfg.method``."""
    return _run(cfg, seed, progress)
