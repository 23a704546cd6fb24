import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from crbrate.channel import ChannelSet, SystemParams, rician_channel, steering_set
from crbrate.corner import (CornerKind, crb_at_rate_max, crb_min, crb_min_extended,
                            crb_min_point, crb_min_value, p0_threshold, rate_max_waterfill,
                            waterfill)
from crbrate.metrics import Metric, crb, crb_point_angle, rate

from conftest import small_params

EXT = (Metric.TRACE, Metric.MAX_EIG, Metric.LOG_DET)


def test_waterfill_golden():
    p, level = waterfill([2.0, 1.0], 1.0, 3.0)
    np.testing.assert_allclose(p, [1.75, 1.25], atol=1e-15)
    assert level == pytest.approx(2.25, abs=1e-15)
    r = np.sum(np.log2(1 + np.array([2.0, 1.0]) * p))
    assert abs(r - (math.log2(4.5) + math.log2(2.25))) <= 1e-12


def test_waterfill_single_active_mode_below_breakpoint():
    # second mode activates once P exceeds 1/1 - 1/2 = 0.5
    p, _ = waterfill([2.0, 1.0], 1.0, 0.5)
    np.testing.assert_allclose(p, [0.5, 0.0], atol=1e-15)
    p, _ = waterfill([2.0, 1.0], 1.0, 0.6)
    assert p[1] > 0


def test_waterfill_zero_gain_gets_nothing():
    p, _ = waterfill([3.0, 0.0, 1.0], 1.0, 5.0)
    assert p[1] == 0.0
    assert p.sum() == pytest.approx(5.0, abs=1e-14)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(1e-3, 1e3), min_size=1, max_size=8),
       st.floats(1e-3, 1e4), st.floats(0.1, 10.0))
def test_waterfill_kkt(gains, power, noise):
    g = np.array(gains)
    p, level = waterfill(g, noise, power)
    assert p.sum() == pytest.approx(power, rel=1e-12)
    floors = noise / g
    on = p > 0
    np.testing.assert_allclose(p[on], level - floors[on], atol=1e-10 * max(1.0, level))
    assert np.all(level <= floors[~on] + 1e-10 * max(1.0, level))


def test_rate_max_rank_one_channel():
    h = np.outer([1.0, 2.0], [1.0, 1j, -1.0])
    ch = ChannelSet.from_matrix(h)
    p = SystemParams(m_tx=3, n_rx_comm=2, cpi_len=10, power=5.0)
    c = rate_max_waterfill(ch, p)
    assert c.power_alloc[0] == pytest.approx(5.0)
    assert np.allclose(c.power_alloc[1:], 0.0)
    assert c.kind is CornerKind.RATE_MAX


def test_rate_max_rate_matches_modes(ref_channel, ref_params):
    c = rate_max_waterfill(ref_channel, ref_params)
    g = ref_channel.gains
    expected = np.sum(np.log2(1 + g * c.power_alloc[: g.size]))
    assert c.rate == pytest.approx(expected, abs=1e-10)
    assert np.trace(c.q).real == pytest.approx(800.0, rel=1e-12)
    assert c.rate == pytest.approx(rate(c.q, ref_channel, ref_params), abs=1e-12)


def test_crb_min_point_rank_one_when_more_sense_antennas(ref_channel, ref_params):
    c = crb_min_point(ref_channel, ref_params)
    assert c.eta == 0.0
    assert np.linalg.matrix_rank(c.q, tol=1e-8 * 800) == 1
    s = steering_set(ref_params)
    closed = ref_params.noise_sense / (
        2 * abs(ref_params.reflect_coeff) ** 2 * ref_params.cpi_len
        * np.vdot(s.b_dot, s.b_dot).real * 8 * 800)
    assert c.crb[Metric.POINT_ANGLE] == pytest.approx(closed, rel=1e-10)
    assert crb_min_value(ref_params, Metric.POINT_ANGLE) == pytest.approx(closed, rel=1e-12)


@pytest.mark.parametrize("ns", [4, 8, 12])
def test_crb_min_point_trace_is_budget(ns):
    p = SystemParams(n_rx_sense=ns)
    c = crb_min_point(rician_channel(p), p)
    assert np.trace(c.q).real == pytest.approx(p.power, rel=1e-12)


def test_crb_min_point_fewer_sense_antennas_uses_limit():
    p = SystemParams(n_rx_sense=4)
    c = crb_min_point(rician_channel(p), p, eps=1e-6)
    assert c.eta == pytest.approx(1 - 1e-6)
    assert c.crb[Metric.POINT_ANGLE] == pytest.approx(crb_min_value(p, Metric.POINT_ANGLE),
                                                      rel=1e-5)


def test_crb_min_point_equal_antennas_search_beats_grid():
    p = SystemParams(n_rx_sense=8)
    ch = rician_channel(p)
    c = crb_min_point(ch, p)
    floor = crb_min_value(p, Metric.POINT_ANGLE)
    # every member of the family is CRB-optimal
    assert c.crb[Metric.POINT_ANGLE] == pytest.approx(floor, rel=1e-9)
    s = steering_set(p)
    best = -np.inf
    for eta in np.linspace(0, 1 - 1e-9, 2001):
        q = (1 - eta) * 800 * np.outer(s.a.conj(), s.a) / 8 + eta * 800 * np.outer(
            s.a_dot.conj(), s.a_dot) / np.vdot(s.a_dot, s.a_dot).real
        best = max(best, rate(q, ch, p))
    assert c.rate >= best - 1e-9


def test_crb_min_point_equal_antennas_eta_zero_is_rank_one_beam():
    p = SystemParams(n_rx_sense=8)
    s = steering_set(p)
    from crbrate.corner import _mixed_cov
    np.testing.assert_allclose(_mixed_cov(0.0, p), 100 * np.outer(s.a.conj(), s.a), atol=1e-12)


def test_crb_min_extended_closed_forms(ref_channel, ref_params):
    c = crb_min_extended(ref_channel, ref_params)
    L = ref_params.cpi_len
    assert c.crb[Metric.TRACE] == pytest.approx(12 * 64 / (800 * L), rel=1e-12)
    assert c.crb[Metric.MAX_EIG] == pytest.approx(8 / (800 * L), rel=1e-12)
    assert c.crb[Metric.LOG_DET] == pytest.approx(96 * math.log(8 / (800 * L)), rel=1e-12)
    expected = np.sum(np.log2(1 + ref_channel.gains * 100.0))
    assert c.rate == pytest.approx(expected, abs=1e-10)
    np.testing.assert_allclose(c.power_alloc, 100.0)


def test_crb_min_dispatch(ref_channel, ref_params):
    assert crb_min(ref_channel, ref_params, "point").eta == 0.0
    assert crb_min(ref_channel, ref_params, "trace").power_alloc is not None


def test_equal_power_dominates_diagonal_grid():
    p = small_params(3)
    ch = rician_channel(p)
    c = crb_min_extended(ch, p)
    P = p.power
    for k in range(1, 2000):
        p1 = P * k / 2000
        q = ch.eigenbasis_covariance([p1, P - p1])
        for met in EXT:
            assert crb(q, p, met) >= c.crb[met] - 1e-9 * abs(c.crb[met])


def test_rate_max_infinite_crb_when_rank_deficient(ref_channel, ref_params):
    assert ref_channel.rank_r < 8
    for met in EXT:
        assert crb_at_rate_max(ref_channel, ref_params, met) == math.inf
    assert p0_threshold(ref_channel, ref_params) == math.inf


def test_rate_max_finite_crb_above_threshold():
    p = SystemParams(m_tx=6, n_rx_comm=6, rician_k=20.0)
    ch = rician_channel(p)
    p0 = p0_threshold(ch, p)
    assert ch.rank_r == 6 and 0 < p0 < p.power
    for met in EXT:
        assert math.isfinite(crb_at_rate_max(ch, p, met))
    below = p.replace(power=0.5 * p0)
    assert crb_at_rate_max(ch, below, Metric.TRACE) == math.inf


def test_point_rate_max_crb_finite_for_random_channels():
    for seed in range(20):
        p = SystemParams(seed=seed)
        assert math.isfinite(crb_at_rate_max(rician_channel(p), p, Metric.POINT_ANGLE))


def test_crb_min_rate_never_exceeds_rate_max():
    for seed in range(10):
        for ns in (4, 8, 12):
            p = SystemParams(seed=seed, n_rx_sense=ns, rician_k=1.0)
            ch = rician_channel(p)
            top = rate_max_waterfill(ch, p).rate
            for met in Metric:
                assert crb_min(ch, p, met).rate <= top + 1e-12
