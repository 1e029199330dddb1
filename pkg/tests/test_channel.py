import numpy as np
import pytest

from hr3l.channel import (
    BAD,
    GOOD,
    CapacityExceeded,
    Channel,
    ChannelConfig,
    ChannelError,
    ChannelMessage,
    DegenerateChain,
    analytic_loss_rate,
    channel_preset,
)

GE = dict(p_gb=0.01, p_bg=0.1)


def _msg(t, bits=16):
    return ChannelMessage(np.array([0]), np.array([t], dtype=np.float16), np.array([True]), t, 0, bits)


def test_lossless_never_loses():
    ch = Channel(ChannelConfig(p_gb=0.3, p_bg=0.3), seed=1)
    assert not ch.loss_pattern(10_000).any()


def test_absorbing_good_never_loses():
    ch = Channel(ChannelConfig(p_gb=0.0, p_bg=0.5, p_loss_bad=1.0), seed=1)
    assert not ch.loss_pattern(10_000).any()
    assert ch.ge_state == GOOD


def test_all_bad_loses_everything():
    ch = Channel(ChannelConfig(p_gb=1.0, p_bg=0.0, p_loss_bad=1.0), seed=1)
    assert ch.loss_pattern(1000).all()
    assert ch.ge_state == BAD


@pytest.mark.parametrize("p_bad,expected", [(0.4, 0.4 / 11), (0.7, 0.7 / 11), (0.0, 0.0)])
def test_analytic_loss_rate(p_bad, expected):
    # stationary pi_bad = p_gb / (p_gb + p_bg) = 0.01 / 0.11 = 1/11
    assert analytic_loss_rate(ChannelConfig(**GE, p_loss_bad=p_bad)) == pytest.approx(expected, abs=1e-15)


def test_analytic_loss_rate_matches_stationary_solve():
    cfg = ChannelConfig(**GE, p_loss_bad=0.7, p_loss_good=0.05)
    P = np.array([[1 - cfg.p_gb, cfg.p_gb], [cfg.p_bg, 1 - cfg.p_bg]])
    w, v = np.linalg.eig(P.T)
    pi = np.real(v[:, np.argmin(np.abs(w - 1))])
    pi /= pi.sum()
    assert analytic_loss_rate(cfg) == pytest.approx(pi[1] * 0.7 + pi[0] * 0.05, abs=1e-12)


def test_degenerate_chain():
    with pytest.raises(DegenerateChain):
        analytic_loss_rate(ChannelConfig(p_gb=0.0, p_bg=0.0))


def test_empirical_rate_close_to_analytic():
    cfg = channel_preset("ge955")
    ch = Channel(cfg, seed=3)
    rate = ch.loss_pattern(200_000).mean()
    # bursty losses: looser than the 1e6-step acceptance bound
    assert abs(rate - analytic_loss_rate(cfg)) < 0.006


def test_same_seed_same_pattern_regardless_of_payload():
    cfg = channel_preset("ge925")
    a, b = Channel(cfg, seed=9), Channel(cfg, seed=9)
    la = [a.send(_msg(t), t) for t in range(5000)]
    lb = [b.send(ChannelMessage(np.arange(3), np.ones(3), np.ones(3, bool), t, 5, 99), t) for t in range(5000)]
    assert la == lb
    assert Channel(cfg, seed=10).loss_pattern(5000).tolist() != la


def test_fixed_delay_delivery():
    ch = Channel(ChannelConfig(delay_steps=2), seed=0)
    m = _msg(5)
    assert ch.send(m, 5) is False
    assert ch.deliver(5) is None and ch.deliver(6) is None
    assert ch.deliver(7) is m
    assert ch.deliver(8) is None


def test_zero_delay_same_step():
    ch = Channel(ChannelConfig(), seed=0)
    m = _msg(0)
    ch.send(m, 0)
    assert ch.deliver(0) is m


def test_empty_queue():
    assert Channel(ChannelConfig()).deliver(0) is None


def test_lost_message_never_delivered():
    ch = Channel(ChannelConfig(p_gb=1.0, p_bg=0.0, p_loss_bad=1.0, delay_steps=1), seed=0)
    assert ch.send(_msg(0), 0) is True
    assert ch.deliver(1) is None and not ch.in_flight


def test_exactly_once_in_order_with_delay():
    cfg = ChannelConfig(**GE, p_loss_bad=0.7, delay_steps=3)
    ch = Channel(cfg, seed=4)
    sent_ok, got = [], []
    for t in range(20_000):
        m = _msg(t)
        if not ch.send(m, t):
            sent_ok.append(t)
        r = ch.deliver(t)
        if r is not None:
            assert t - r.send_time == 3
            got.append(r.send_time)
    # anything sent in the last 3 steps is still in flight
    assert got == [t for t in sent_ok if t < 20_000 - 3]


def test_missed_delivery_is_an_error():
    ch = Channel(ChannelConfig(delay_steps=1))
    ch.send(_msg(0), 0)
    with pytest.raises(ChannelError):
        ch.deliver(5)


def test_capacity():
    ch = Channel(ChannelConfig(capacity_bits=100))
    ch.send(_msg(0, bits=100), 0)
    with pytest.raises(CapacityExceeded):
        ch.send(_msg(1, bits=101), 1)


def test_presets():
    assert channel_preset("ideal") == ChannelConfig()
    g = channel_preset("ge955")
    assert (g.p_gb, g.p_bg, g.p_loss_bad, g.p_loss_good) == (0.01, 0.1, 0.4, 0.0)
    assert channel_preset("ge925").p_loss_bad == 0.7
    assert channel_preset("delay3").delay_steps == 3
    assert channel_preset("cap:850").capacity_bits == 850
    c = channel_preset("ge925+delay2+cap:2560")
    assert (c.p_loss_bad, c.delay_steps, c.capacity_bits) == (0.7, 2, 2560)
    with pytest.raises(ValueError):
        channel_preset("wifi")


def test_config_validation():
    with pytest.raises(ValueError):
        ChannelConfig(p_gb=1.5)
    with pytest.raises(ValueError):
        ChannelConfig(delay_steps=-1)


def test_message_dense():
    m = ChannelMessage(np.array([1, 3]), np.array([0.5, -2.0], dtype=np.float16), np.array([0, 1, 0, 1], bool), 0, 0, 36)
    np.testing.assert_array_equal(m.dense(), [0, 0.5, 0, -2.0])


@pytest.mark.parametrize("preset", ["ge925", "ge955", "ideal"])
def test_loss_pattern_matches_stepwise_draws(preset):
    a, b = Channel(channel_preset(preset), 11), Channel(channel_preset(preset), 11)
    mixed = [a.ge_step() for _ in range(10)] + list(a.loss_pattern(5000)) + [a.ge_step() for _ in range(7)]
    assert mixed == [b.ge_step() for _ in range(5017)]
    assert a.ge_state == b.ge_state
