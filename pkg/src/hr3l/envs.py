"""Native continuous-control environments with per-step rewards in [0, 1].

Two tasks are provided, a pendulum swing-up and a cart-pole swing-up. State is
a small immutable value; the step functions are pure, so any number of
environments can run side by side.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

EPISODE_LENGTH = 1000
RESET_NOISE = 0.05

# pendulum constants
PEND_DT = 0.05
PEND_G = 10.0
PEND_M = 1.0
PEND_L = 1.0
PEND_MAX_SPEED = 8.0
PEND_MAX_TORQUE = 2.0

# cart-pole constants
CP_DT = 0.02
CP_G = 9.8
CP_M_CART = 1.0
CP_M_POLE = 0.1
CP_HALF_LENGTH = 0.5
CP_FORCE = 10.0
CP_X_LIMIT = 2.4
CP_MAX_SPEED = 10.0

ENV_NAMES = ("pendulum", "cartpole")


def wrap_angle(theta: float) -> float:
    """Map an angle onto (-pi, pi]."""
    return float(np.pi - np.mod(np.pi - theta, 2.0 * np.pi))


@dataclass(frozen=True)
class EnvState:
    name: str
    internal: np.ndarray

    @property
    def observation(self) -> np.ndarray:
        return observe(self)


@dataclass(frozen=True)
class StepOutcome:
    next_state: EnvState
    reward: float
    episode_done: bool = False


def obs_dim(name: str) -> int:
    return {"pendulum": 3, "cartpole": 5}[_check_name(name)]


def act_dim(name: str) -> int:
    _check_name(name)
    return 1


def _check_name(name: str) -> str:
    if name not in ENV_NAMES:
        raise ValueError(f"unknown environment {name!r}, expected one of {ENV_NAMES}")
    return name


def env_reset(name: str, seed: int, noise: float = RESET_NOISE) -> EnvState:
    """Initial state for `name`, deterministic in `seed`.

    The pendulum hangs down and the cart-pole pole starts near upright, both
    perturbed by Uniform(-noise, noise) draws.
    """
    _check_name(name)
    rng = np.random.default_rng(seed)
    if name == "pendulum":
        u, v = rng.uniform(-noise, noise, size=2) if noise > 0 else (0.0, 0.0)
        return EnvState(name, np.array([wrap_angle(np.pi + u), v], dtype=np.float64))
    u = rng.uniform(-noise, noise, size=4) if noise > 0 else np.zeros(4)
    x, x_dot, theta, theta_dot = u
    return EnvState(name, np.array([x, x_dot, wrap_angle(theta), theta_dot], dtype=np.float64))


def observe(state: EnvState) -> np.ndarray:
    s = state.internal
    if state.name == "pendulum":
        theta, theta_dot = s
        return np.array([np.cos(theta), np.sin(theta), theta_dot / PEND_MAX_SPEED])
    x, x_dot, theta, theta_dot = s
    return np.array([
        x / CP_X_LIMIT,
        x_dot / CP_MAX_SPEED,
        np.cos(theta),
        np.sin(theta),
        theta_dot / CP_MAX_SPEED,
    ])


def _action_scalar(action) -> float:
    a = np.asarray(action, dtype=np.float64).reshape(-1)
    return float(np.clip(a[0], -1.0, 1.0))


def pendulum_step(state: EnvState, action) -> StepOutcome:
    theta, theta_dot = state.internal
    u = PEND_MAX_TORQUE * _action_scalar(action)
    theta_acc = PEND_G / PEND_L * np.sin(theta) + 3.0 * u / (PEND_M * PEND_L**2)
    theta_dot = float(np.clip(theta_dot + theta_acc * PEND_DT, -PEND_MAX_SPEED, PEND_MAX_SPEED))
    theta = wrap_angle(theta + theta_dot * PEND_DT)
    reward = (1.0 + np.cos(theta)) / 2.0
    return StepOutcome(EnvState(state.name, np.array([theta, theta_dot])), float(reward))


def cartpole_derivatives(x_dot: float, theta: float, theta_dot: float, force: float):
    """Cart and pole accelerations of the classic cart-pole model."""
    total_mass = CP_M_CART + CP_M_POLE
    polemass_length = CP_M_POLE * CP_HALF_LENGTH
    sin_t, cos_t = np.sin(theta), np.cos(theta)
    temp = (force + polemass_length * theta_dot**2 * sin_t) / total_mass
    theta_acc = (CP_G * sin_t - cos_t * temp) / (
        CP_HALF_LENGTH * (4.0 / 3.0 - CP_M_POLE * cos_t**2 / total_mass)
    )
    x_acc = temp - polemass_length * theta_acc * cos_t / total_mass
    return x_acc, theta_acc


def cartpole_step(state: EnvState, action) -> StepOutcome:
    x, x_dot, theta, theta_dot = state.internal
    force = CP_FORCE * _action_scalar(action)
    x_acc, theta_acc = cartpole_derivatives(x_dot, theta, theta_dot, force)
    # velocities are clipped so the normalized observation stays in [-1, 1]
    x_dot = float(np.clip(x_dot + CP_DT * x_acc, -CP_MAX_SPEED, CP_MAX_SPEED))
    x = x + CP_DT * x_dot
    theta_dot = float(np.clip(theta_dot + CP_DT * theta_acc, -CP_MAX_SPEED, CP_MAX_SPEED))
    theta = wrap_angle(theta + CP_DT * theta_dot)
    if abs(x) > CP_X_LIMIT:
        x = float(np.sign(x) * CP_X_LIMIT)
        x_dot = 0.0
    reward = (1.0 + np.cos(theta)) / 2.0 * float(abs(x) <= CP_X_LIMIT)
    return StepOutcome(EnvState(state.name, np.array([x, x_dot, theta, theta_dot])), float(reward))


_STEP_FNS = {"pendulum": pendulum_step, "cartpole": cartpole_step}


def env_step(state: EnvState, action) -> StepOutcome:
    return _STEP_FNS[state.name](state, action)


class Env:
    """Stateful episode wrapper with a fixed 1000-step time limit.

    Episode k is reset from a seed drawn from a generator seeded with `seed`,
    so the whole sequence of episodes is reproducible.
    """

    def __init__(self, name: str, seed: int, episode_length: int = EPISODE_LENGTH):
        self.name = _check_name(name)
        self.episode_length = episode_length
        self._seeds = np.random.default_rng(seed)
        self.state: EnvState | None = None
        self.t = 0
        self.episode = -1

    @property
    def obs_dim(self) -> int:
        return obs_dim(self.name)

    @property
    def act_dim(self) -> int:
        return act_dim(self.name)

    def reset(self) -> np.ndarray:
        seed = int(self._seeds.integers(0, 2**63 - 1))
        self.state = env_reset(self.name, seed)
        self.t = 0
        self.episode += 1
        return observe(self.state)

    def step(self, action) -> tuple[np.ndarray, float, bool]:
        out = env_step(self.state, action)
        self.state = out.next_state
        self.t += 1
        return observe(self.state), out.reward, self.t >= self.episode_length
