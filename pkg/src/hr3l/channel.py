"""Imperfect downlink: Gilbert-Elliott erasures, fixed delay and a capacity cap.

Each call to :meth:`Channel.send` advances the two-state Markov chain first
and then draws the erasure with the loss probability of the new state. Both
draws always come from the channel's own generator in that order, so the loss
pattern depends only on the seed and the number of sends.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

GOOD, BAD = 0, 1

# good->bad and bad->good transition probabilities of the GE experiments
GE_P_GB = 0.01
GE_P_BG = 0.1


class ChannelError(Exception):
    pass


class CapacityExceeded(ChannelError):
    pass


class DegenerateChain(ChannelError):
    pass


@dataclass(frozen=True)
class ChannelConfig:
    p_gb: float = 0.0
    p_bg: float = 1.0
    p_loss_bad: float = 0.0
    p_loss_good: float = 0.0
    delay_steps: int = 0
    capacity_bits: int | None = None  # None means unlimited

    def __post_init__(self):
        for name in ("p_gb", "p_bg", "p_loss_bad", "p_loss_good"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name}={p} is not a probability")
        if self.delay_steps < 0:
            raise ValueError("delay_steps must be >= 0")
        if self.capacity_bits is not None and self.capacity_bits <= 0:
            raise ValueError("capacity_bits must be positive")

    @property
    def lossless(self) -> bool:
        return self.p_loss_bad == 0.0 and self.p_loss_good == 0.0


def channel_preset(spec: str) -> ChannelConfig:
    """Build a config from a preset name.

    Presets are ``ideal``, ``ge955``, ``ge925``, ``delay<d>`` and
    ``cap:<bits>``; several can be joined with ``+``, e.g. ``ge925+delay2``.
    """
    kw: dict = {}
    for part in spec.strip().lower().split("+"):
        part = part.strip()
        if part == "ideal":
            continue
        if part in ("ge955", "ge925"):
            kw.update(p_gb=GE_P_GB, p_bg=GE_P_BG, p_loss_bad=0.4 if part == "ge955" else 0.7)
        elif part.startswith("delay") and part[5:].isdigit():
            kw["delay_steps"] = int(part[5:])
        elif part.startswith("cap:") and part[4:].isdigit():
            kw["capacity_bits"] = int(part[4:])
        else:
            raise ValueError(f"unknown channel preset {part!r}")
    return ChannelConfig(**kw)


def stationary_bad_probability(cfg: ChannelConfig) -> float:
    if cfg.p_gb == 0.0 and cfg.p_bg == 0.0:
        raise DegenerateChain("p_gb = p_bg = 0 has no unique stationary distribution")
    return cfg.p_gb / (cfg.p_gb + cfg.p_bg)


def analytic_loss_rate(cfg: ChannelConfig) -> float:
    """Long-run erasure rate of the chain."""
    pi_bad = stationary_bad_probability(cfg)
    return pi_bad * cfg.p_loss_bad + (1.0 - pi_bad) * cfg.p_loss_good


@dataclass
class ChannelMessage:
    """One feature packet.

    `indices` and `values` form the payload; `values` holds the wire
    representation (float16 when quantized).
    """

    indices: np.ndarray
    values: np.ndarray
    mask: np.ndarray
    send_time: int
    generation: int
    size_bits: int
    episode: int = 0

    @property
    def n_features(self) -> int:
        return int(self.mask.size)

    def dense(self) -> np.ndarray:
        """Dequantized values scattered into a length-F float64 vector (zeros elsewhere)."""
        out = np.zeros(self.mask.size)
        out[self.indices] = self.values.astype(np.float64)
        return out


@dataclass
class Channel:
    """Seeded, single-owner channel instance."""

    cfg: ChannelConfig
    seed: int = 0
    ge_state: int = GOOD
    in_flight: deque = field(default_factory=deque)
    _block: int = 4096

    def __post_init__(self):
        self._rng = np.random.default_rng(self.seed)
        self._buf: list[float] = []
        self._pos = 0
        self.n_sent = 0
        self.n_lost = 0

    def _uniform(self) -> float:
        if self._pos >= len(self._buf):
            self._buf = self._rng.random(self._block).tolist()
            self._pos = 0
        u = self._buf[self._pos]
        self._pos += 1
        return u

    def ge_step(self) -> bool:
        """Advance the chain one step and return whether the packet is erased."""
        u_trans = self._uniform()
        u_loss = self._uniform()
        if self.ge_state == GOOD:
            if u_trans < self.cfg.p_gb:
                self.ge_state = BAD
        elif u_trans < self.cfg.p_bg:
            self.ge_state = GOOD
        p = self.cfg.p_loss_bad if self.ge_state == BAD else self.cfg.p_loss_good
        return u_loss < p

    def _uniforms(self, n: int) -> list:
        """The next `n` draws of the same stream `_uniform` reads from."""
        out = self._buf[self._pos:self._pos + n]
        self._pos += len(out)
        while len(out) < n:
            self._buf = self._rng.random(self._block).tolist()
            take = min(n - len(out), self._block)
            out += self._buf[:take]
            self._pos = take
        return out

    def loss_pattern(self, n: int) -> np.ndarray:
        """Erasure flags for the next `n` steps; same draws as `n` calls to ge_step."""
        u = self._uniforms(2 * n)
        p_gb, p_bg = self.cfg.p_gb, self.cfg.p_bg
        p_loss = (self.cfg.p_loss_good, self.cfg.p_loss_bad)
        state = self.ge_state
        out = [False] * n
        for i in range(n):
            if state == GOOD:
                if u[2 * i] < p_gb:
                    state = BAD
            elif u[2 * i] < p_bg:
                state = GOOD
            out[i] = u[2 * i + 1] < p_loss[state == BAD]
        self.ge_state = state
        return np.array(out, dtype=bool)

    def send(self, msg, t: int, size_bits: int | None = None) -> bool:
        """Push `msg` into the channel at step `t`; returns True if it was erased.

        `size_bits` defaults to ``msg.size_bits``.
        """
        bits = msg.size_bits if size_bits is None else size_bits
        if self.cfg.capacity_bits is not None and bits > self.cfg.capacity_bits:
            raise CapacityExceeded(f"{bits} bits > capacity {self.cfg.capacity_bits}")
        lost = self.ge_step()
        self.n_sent += 1
        if lost:
            self.n_lost += 1
        else:
            self.in_flight.append((t + self.cfg.delay_steps, msg))
        return lost

    def deliver(self, t: int):
        """Pop the message due at step `t`, or return None."""
        if not self.in_flight:
            return None
        due, msg = self.in_flight[0]
        if due < t:
            raise ChannelError(f"message due at {due} was never collected (now {t})")
        if due > t:
            return None
        self.in_flight.popleft()
        if self.in_flight and self.in_flight[0][0] == t:
            raise ChannelError(f"two messages due at step {t}")
        return msg
