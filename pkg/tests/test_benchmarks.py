import logging
import math

import numpy as np
import pytest

from crbrate.benchmarks import (BenchmarkCurvePoint, Scheme, applicable_schemes,
                                benchmark_boundary, benchmark_rate_at, default_knob_grid,
                                pareto_envelope, power_split_ep, power_split_sem,
                                time_switching)
from crbrate.boundary import feasibility_range, solve
from crbrate.channel import SystemParams, rician_channel
from crbrate.cli import _mid_gamma
from crbrate.corner import crb_min, crb_min_extended, rate_max_waterfill
from crbrate.metrics import Metric
from crbrate.outcome import NotApplicableError

from conftest import small_params

EXT = (Metric.TRACE, Metric.MAX_EIG, Metric.LOG_DET)


@pytest.fixture(autouse=True)
def _quiet():
    logging.disable(logging.WARNING)
    yield
    logging.disable(logging.NOTSET)


@pytest.fixture(scope="module")
def full_rank():
    p = SystemParams(m_tx=6, n_rx_comm=6, rician_k=20.0)
    return rician_channel(p), p


def test_scheme_parse():
    assert Scheme.parse("sem") is Scheme.SPLIT_SEM
    assert Scheme.parse("split-ep") is Scheme.SPLIT_EP
    assert Scheme.parse("TS") is Scheme.TIME_SWITCH
    with pytest.raises(ValueError):
        Scheme.parse("random")


def test_time_switching_endpoints_are_corners(ref_channel, ref_params):
    wf = rate_max_waterfill(ref_channel, ref_params)
    cm = crb_min(ref_channel, ref_params, Metric.POINT_ANGLE)
    one = time_switching(wf, cm, 1.0, Metric.POINT_ANGLE, ref_params, ref_channel)
    zero = time_switching(wf, cm, 0.0, Metric.POINT_ANGLE, ref_params, ref_channel)
    assert one.q is wf.q and one.rate == wf.rate
    assert one.crb == wf.crb[Metric.POINT_ANGLE]
    assert zero.q is cm.q and zero.rate == cm.rate
    assert zero.crb == cm.crb[Metric.POINT_ANGLE]


def test_time_switching_rate_linear(ref_channel, ref_params):
    wf = rate_max_waterfill(ref_channel, ref_params)
    cm = crb_min(ref_channel, ref_params, Metric.POINT_ANGLE)
    for f in np.linspace(0, 1, 11):
        b = time_switching(wf, cm, f, Metric.POINT_ANGLE, ref_params, ref_channel)
        assert b.rate == pytest.approx(f * wf.rate + (1 - f) * cm.rate, abs=1e-12)


def test_time_switching_rank_deficient_not_applicable(ref_channel, ref_params):
    wf = rate_max_waterfill(ref_channel, ref_params)
    cm = crb_min(ref_channel, ref_params, Metric.TRACE)
    with pytest.raises(NotApplicableError):
        time_switching(wf, cm, 0.5, Metric.TRACE, ref_params, ref_channel)


def test_time_switching_knob_range(ref_channel, ref_params):
    wf = rate_max_waterfill(ref_channel, ref_params)
    with pytest.raises(ValueError):
        time_switching(wf, wf, 1.5, Metric.POINT_ANGLE, ref_params, ref_channel)


@pytest.mark.parametrize("seed", [0, 1, 2])
@pytest.mark.parametrize("metric", list(Metric))
def test_time_switching_half_dominated_by_solver(seed, metric):
    p = small_params(seed)
    ch = rician_channel(p)
    wf = rate_max_waterfill(ch, p)
    if metric.extended and not math.isfinite(wf.crb[metric]):
        pytest.skip("rate-optimal covariance is rank deficient")
    b = time_switching(wf, crb_min(ch, p, metric), 0.5, metric, p, ch)
    assert solve(ch, p, metric, b.crb).rate >= b.rate - 1e-6


def test_ep_all_data_gives_infinite_crb(ref_channel, ref_params):
    b = power_split_ep(ref_channel, ref_params, 1.0, Metric.TRACE)
    assert b.crb == math.inf


def test_ep_equal_power_at_r_over_m(ref_channel, ref_params):
    b = power_split_ep(ref_channel, ref_params, 6 / 8, Metric.TRACE)
    c = crb_min_extended(ref_channel, ref_params)
    np.testing.assert_allclose(b.q, c.q, atol=1e-10)
    assert b.crb == pytest.approx(c.crb[Metric.TRACE], rel=1e-10)
    assert b.rate == pytest.approx(c.rate, abs=1e-10)


def test_ep_full_rank_forces_beta_one(full_rank):
    ch, p = full_rank
    b = power_split_ep(ch, p, 0.3, Metric.TRACE)
    assert b.knob == 1.0
    np.testing.assert_allclose(b.q, 800 / 6 * np.eye(6), atol=1e-10)


def test_sem_equal_power_at_one_over_m(ref_channel, ref_params):
    b = power_split_sem(ref_channel, ref_params, 1 / 8, Metric.MAX_EIG)
    assert b.crb == pytest.approx(crb_min_extended(ref_channel, ref_params).crb[
        Metric.MAX_EIG], rel=1e-10)


def test_sem_all_on_top_mode_is_rank_one(ref_channel, ref_params):
    b = power_split_sem(ref_channel, ref_params, 1.0, Metric.LOG_DET)
    assert b.crb == math.inf
    assert np.linalg.matrix_rank(b.q, tol=1e-8) == 1


def test_sem_near_optimal_at_low_snr():
    # strong line-of-sight channel at 0 dB: a dominant eigenmode exists
    p = SystemParams(m_tx=4, n_rx_comm=4, n_rx_sense=4, power=1.0, rician_k=100.0)
    ch = rician_channel(p)
    for met in EXT:
        lo, hi = feasibility_range(met, ch, p)
        g = _mid_gamma(met, lo, hi, p)
        opt = solve(ch, p, met, g).rate
        sem = benchmark_rate_at(Scheme.SPLIT_SEM, ch, p, met, g)
        assert sem <= opt + 1e-9
        assert sem >= 0.98 * opt


def test_applicable_schemes(ref_channel, ref_params, full_rank):
    assert applicable_schemes(ref_channel, ref_params, Metric.POINT_ANGLE) == [
        Scheme.TIME_SWITCH]
    assert applicable_schemes(ref_channel, ref_params, Metric.TRACE) == [
        Scheme.SPLIT_EP, Scheme.SPLIT_SEM]
    ch, p = full_rank
    assert Scheme.TIME_SWITCH in applicable_schemes(ch, p, Metric.LOG_DET)


def test_two_point_grid_gives_corners(full_rank):
    ch, p = full_rank
    env = benchmark_boundary(Scheme.TIME_SWITCH, ch, p, Metric.TRACE, [0.0, 1.0])
    wf = rate_max_waterfill(ch, p)
    cm = crb_min_extended(ch, p)
    assert [b.rate for b in env] == [cm.rate, wf.rate]
    assert env[0].crb == cm.crb[Metric.TRACE]


def test_boundary_rejects_empty_grid(full_rank):
    ch, p = full_rank
    with pytest.raises(ValueError):
        benchmark_boundary(Scheme.SPLIT_EP, ch, p, Metric.TRACE, [])


def test_boundary_propagates_not_applicable(ref_channel, ref_params):
    with pytest.raises(NotApplicableError):
        benchmark_boundary(Scheme.TIME_SWITCH, ref_channel, ref_params, Metric.TRACE,
                           default_knob_grid(5))


@pytest.mark.parametrize("scheme", [Scheme.SPLIT_EP, Scheme.SPLIT_SEM])
def test_envelope_monotone(ref_channel, ref_params, scheme):
    env = benchmark_boundary(scheme, ref_channel, ref_params, Metric.TRACE,
                             default_knob_grid())
    crbs = [b.crb for b in env]
    rates = [b.rate for b in env]
    assert np.all(np.diff(crbs) > 0) and np.all(np.diff(rates) > 0)


def test_pareto_envelope_filters_dominated():
    pts = [BenchmarkCurvePoint(Scheme.SPLIT_EP, k, c, r)
           for k, c, r in [(0.0, 1.0, 1.0), (0.1, 2.0, 0.5), (0.2, 3.0, 2.0), (0.3, 3.0, 1.5)]]
    env = pareto_envelope(pts)
    assert [(b.crb, b.rate) for b in env] == [(1.0, 1.0), (3.0, 2.0)]


def test_rate_at_unreachable_bound_is_nan(ref_channel, ref_params):
    assert math.isnan(benchmark_rate_at(Scheme.SPLIT_EP, ref_channel, ref_params,
                                        Metric.TRACE, 1e-9))


@pytest.mark.parametrize("scheme", [Scheme.SPLIT_EP, Scheme.SPLIT_SEM])
@pytest.mark.parametrize("metric", EXT)
def test_optimal_dominates_split_envelope(ref_channel, ref_params, scheme, metric):
    env = benchmark_boundary(scheme, ref_channel, ref_params, metric, default_knob_grid(21))
    for b in env:
        if not math.isfinite(b.crb):
            continue
        assert solve(ref_channel, ref_params, metric, b.crb).rate >= b.rate - 1e-6
