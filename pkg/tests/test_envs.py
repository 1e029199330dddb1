import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hr3l.envs import (
    CP_X_LIMIT,
    Env,
    EnvState,
    cartpole_step,
    env_reset,
    env_step,
    observe,
    pendulum_step,
)


def test_reset_is_deterministic():
    a = env_reset("pendulum", 42)
    b = env_reset("pendulum", 42)
    np.testing.assert_array_equal(a.internal, b.internal)


def test_reset_zero_noise_hangs_down():
    s = env_reset("pendulum", 7, noise=0.0)
    assert s.internal[0] == pytest.approx(np.pi)
    assert s.internal[1] == 0.0


def test_reset_seeds_differ():
    assert not np.array_equal(env_reset("pendulum", 1).internal, env_reset("pendulum", 2).internal)
    assert not np.array_equal(env_reset("cartpole", 1).internal, env_reset("cartpole", 2).internal)


def test_reset_noise_scale():
    for seed in range(50):
        th, thd = env_reset("pendulum", seed).internal
        assert abs(abs(th) - np.pi) <= 0.05 + 1e-12
        assert abs(thd) <= 0.05
        assert np.all(np.abs(env_reset("cartpole", seed).internal) <= 0.05)


def test_pendulum_equilibria():
    up = pendulum_step(EnvState("pendulum", np.array([0.0, 0.0])), [0.0])
    assert up.next_state.internal[0] == 0.0 and up.reward == 1.0
    down = pendulum_step(EnvState("pendulum", np.array([np.pi, 0.0])), [0.0])
    assert down.next_state.internal[0] == pytest.approx(np.pi)
    assert down.reward == pytest.approx(0.0, abs=1e-15)


def test_pendulum_one_euler_step_by_hand():
    out = pendulum_step(EnvState("pendulum", np.array([np.pi / 2, 0.0])), [0.0])
    th, thd = out.next_state.internal
    assert thd == pytest.approx(0.5, abs=1e-15)
    assert th == pytest.approx(np.pi / 2 + 0.025, abs=1e-15)
    assert out.reward == pytest.approx((1.0 - np.sin(0.025)) / 2.0, abs=1e-15)


def test_pendulum_action_is_clamped():
    s = EnvState("pendulum", np.array([0.3, 0.1]))
    a = pendulum_step(s, [5.0]).next_state.internal
    b = pendulum_step(s, [1.0]).next_state.internal
    np.testing.assert_array_equal(a, b)


def _reference_cartpole(x, x_dot, th, th_dot, f):
    # textbook cart-pole (Barto, Sutton & Anderson 1983), written independently
    mc, mp, l, g, dt = 1.0, 0.1, 0.5, 9.8, 0.02
    num = g * np.sin(th) + np.cos(th) * (-f - mp * l * th_dot**2 * np.sin(th)) / (mc + mp)
    den = l * (4.0 / 3.0 - mp * np.cos(th) ** 2 / (mc + mp))
    th_acc = num / den
    x_acc = (f + mp * l * (th_dot**2 * np.sin(th) - th_acc * np.cos(th))) / (mc + mp)
    x_dot = x_dot + dt * x_acc
    x = x + dt * x_dot
    th_dot = th_dot + dt * th_acc
    th = th + dt * th_dot
    return np.array([x, x_dot, th, th_dot])


@pytest.mark.parametrize("start,u", [((0.0, 0.0, 0.1, 0.0), 0.0), ((0.3, -0.2, -0.5, 1.0), 0.7)])
def test_cartpole_matches_reference_integrator(start, u):
    out = cartpole_step(EnvState("cartpole", np.array(start)), [u])
    ref = _reference_cartpole(*start, 10.0 * u)
    np.testing.assert_allclose(out.next_state.internal, ref, rtol=0, atol=1e-14)


def test_cartpole_rewards():
    assert cartpole_step(EnvState("cartpole", np.zeros(4)), [0.0]).reward == 1.0
    wall = cartpole_step(EnvState("cartpole", np.array([CP_X_LIMIT, 1.0, np.pi, 0.0])), [1.0])
    assert wall.next_state.internal[0] == CP_X_LIMIT
    assert wall.next_state.internal[1] == 0.0
    th = wall.next_state.internal[2]
    assert wall.reward == pytest.approx((1 + np.cos(th)) / 2, rel=1e-12)
    assert wall.reward < 1e-4


def test_observe_values():
    np.testing.assert_allclose(observe(EnvState("pendulum", np.array([0.0, 0.0]))), [1, 0, 0])
    np.testing.assert_allclose(observe(EnvState("pendulum", np.array([np.pi, 0.0]))), [-1, 0, 0], atol=1e-15)
    np.testing.assert_allclose(
        observe(EnvState("pendulum", np.array([np.pi / 3, 4.0]))), [0.5, np.sin(np.pi / 3), 0.5], atol=1e-15
    )


@pytest.mark.parametrize("name", ["pendulum", "cartpole"])
def test_trajectories_are_bitwise_reproducible(name):
    rng = np.random.default_rng(3)
    actions = rng.uniform(-1, 1, size=(300, 1))
    runs = []
    for _ in range(2):
        env = Env(name, seed=11)
        env.reset()
        runs.append(np.array([env.step(a)[0] for a in actions]))
    np.testing.assert_array_equal(runs[0], runs[1])


def test_episode_is_exactly_1000_steps():
    env = Env("pendulum", 0)
    env.reset()
    dones = [env.step([0.0])[2] for _ in range(1000)]
    assert not any(dones[:-1]) and dones[-1]


@pytest.mark.parametrize("name", ["pendulum", "cartpole"])
def test_invariants_fuzz(name):
    # bulk fuzz: random states and actions, 20k steps per env
    rng = np.random.default_rng(0)
    env = Env(name, seed=5, episode_length=500)
    env.reset()
    for i in range(20_000):
        a = rng.uniform(-1.5, 1.5, size=1)
        obs, r, done = env.step(a)
        assert 0.0 <= r <= 1.0
        assert np.all(np.abs(obs) <= 1.0 + 1e-12)
        th = env.state.internal[0] if name == "pendulum" else env.state.internal[2]
        assert -np.pi < th <= np.pi
        if name == "pendulum":
            assert abs(env.state.internal[1]) <= 8.0
        if done:
            env.reset()


@settings(max_examples=200, deadline=None)
@given(
    th=st.floats(-np.pi, np.pi, exclude_min=True),
    thd=st.floats(-8, 8),
    a=st.floats(-3, 3),
)
def test_pendulum_step_properties(th, thd, a):
    out = pendulum_step(EnvState("pendulum", np.array([th, thd])), [a])
    th2, thd2 = out.next_state.internal
    assert -np.pi < th2 <= np.pi
    assert abs(thd2) <= 8.0
    assert 0.0 <= out.reward <= 1.0


def test_env_step_dispatch():
    s = env_reset("cartpole", 0)
    np.testing.assert_array_equal(env_step(s, [0.2]).next_state.internal, cartpole_step(s, [0.2]).next_state.internal)
