import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from crbrate.channel import ChannelSet, SystemParams, steering_set
from crbrate.metrics import (Metric, crb, crb_extended, crb_point_angle, hermitian_inverse,
                             mimo_rate, rate)

from conftest import random_psd


def direct_point_crb(q, params):
    """Angle CRB assembled from the response matrices without any shortcuts."""
    s = steering_set(params)
    a_mat = np.outer(s.b, s.a)
    ad_mat = np.outer(s.b, s.a_dot) + np.outer(s.b_dot, s.a)
    t_aa = np.trace(a_mat.conj().T @ a_mat @ q).real
    t_dd = np.trace(ad_mat.conj().T @ ad_mat @ q).real
    t_da = np.trace(ad_mat.conj().T @ a_mat @ q)
    den = 2 * abs(params.reflect_coeff) ** 2 * params.cpi_len * (t_dd * t_aa - abs(t_da) ** 2)
    return params.noise_sense * t_aa / den


def test_metric_parse_aliases():
    assert Metric.parse("Trace") is Metric.TRACE
    assert Metric.parse("max_eig") is Metric.MAX_EIG
    assert Metric.parse("4") is Metric.LOG_DET
    assert Metric.parse(1) is Metric.POINT_ANGLE
    assert Metric.parse("point-angle") is Metric.POINT_ANGLE
    with pytest.raises(ValueError):
        Metric.parse("frobenius")


def test_rate_of_zero_covariance(ref_channel, ref_params):
    assert rate(np.zeros((8, 8)), ref_channel, ref_params) == 0.0


def test_rate_scalar_channel():
    assert mimo_rate(np.array([[1.0]]), np.array([[1.0]]), 1.0) == pytest.approx(1.0, abs=1e-15)


def test_rate_two_mode_hand_value():
    h = np.diag([math.sqrt(2.0), 1.0])
    q = np.diag([1.75, 1.25])
    expected = math.log2(4.5) + math.log2(2.25)
    assert mimo_rate(h, q, 1.0) == pytest.approx(expected, abs=1e-12)
    assert expected == pytest.approx(3.33985, abs=1e-5)


def test_rate_concavity_spot_check(ref_channel, ref_params):
    rng = np.random.default_rng(1)
    for _ in range(50):
        q1 = random_psd(rng, 8, scale=10.0)
        q2 = random_psd(rng, 8, rank=2, scale=10.0)
        mid = rate(0.5 * (q1 + q2), ref_channel, ref_params)
        avg = 0.5 * (rate(q1, ref_channel, ref_params) + rate(q2, ref_channel, ref_params))
        assert mid >= avg - 1e-9


def test_trace_crb_convexity():
    rng = np.random.default_rng(2)
    for _ in range(50):
        q1 = random_psd(rng, 4) + 0.1 * np.eye(4)
        q2 = random_psd(rng, 4) + 0.1 * np.eye(4)
        lhs = np.trace(hermitian_inverse(0.5 * (q1 + q2))).real
        rhs = 0.5 * (np.trace(hermitian_inverse(q1)).real + np.trace(hermitian_inverse(q2)).real)
        assert lhs <= rhs + 1e-9


def test_hermitian_inverse_matches_numpy():
    rng = np.random.default_rng(3)
    q = random_psd(rng, 5) + np.eye(5)
    np.testing.assert_allclose(hermitian_inverse(q), np.linalg.inv(q), atol=1e-12)


def test_point_crb_matches_direct_assembly(ref_params):
    rng = np.random.default_rng(4)
    for _ in range(20):
        q = random_psd(rng, 8)
        assert crb_point_angle(q, ref_params) == pytest.approx(
            direct_point_crb(q, ref_params), rel=1e-10)


def test_point_crb_rank_one_closed_form(ref_params):
    s = steering_set(ref_params)
    P = ref_params.power
    q = P / np.vdot(s.a, s.a).real * np.outer(s.a.conj(), s.a)
    expected = ref_params.noise_sense / (
        2 * abs(ref_params.reflect_coeff) ** 2 * ref_params.cpi_len
        * np.vdot(s.b_dot, s.b_dot).real * np.vdot(s.a, s.a).real * P)
    assert crb_point_angle(q, ref_params) == pytest.approx(expected, rel=1e-10)
    assert direct_point_crb(q, ref_params) == pytest.approx(expected, rel=1e-10)


def test_point_crb_not_estimable_with_one_sense_antenna():
    p = SystemParams(n_rx_sense=1)
    s = steering_set(p)
    q = np.outer(s.a.conj(), s.a)
    assert crb_point_angle(q, p) == math.inf


def test_point_crb_zero_covariance_is_inf(ref_params):
    assert crb_point_angle(np.zeros((8, 8)), ref_params) == math.inf


def test_extended_equal_power_closed_forms(ref_params):
    P, M, L, ns = 800.0, 8, ref_params.cpi_len, 12
    q = P / M * np.eye(M)
    assert crb(q, ref_params, Metric.TRACE) == pytest.approx(ns * M ** 2 / (P * L), rel=1e-12)
    assert crb(q, ref_params, Metric.MAX_EIG) == pytest.approx(M / (L * P), rel=1e-12)
    assert crb(q, ref_params, Metric.LOG_DET) == pytest.approx(
        M * ns * math.log(M / (L * P)), rel=1e-12)


@pytest.mark.parametrize("metric", [Metric.TRACE, Metric.MAX_EIG, Metric.LOG_DET])
def test_extended_singular_is_inf(ref_params, metric):
    q = np.diag([1.0] * 7 + [0.0])
    assert crb_extended(q, ref_params, metric) == math.inf


def test_extended_rejects_point_metric(ref_params):
    with pytest.raises(ValueError):
        crb_extended(np.eye(8), ref_params, Metric.POINT_ANGLE)


def test_extended_crbs_against_kronecker_fisher():
    p = SystemParams(m_tx=3, n_rx_sense=2, n_rx_comm=2, cpi_len=20, noise_sense=0.7)
    rng = np.random.default_rng(5)
    q = random_psd(rng, 3) + 0.2 * np.eye(3)
    fim = p.cpi_len / p.noise_sense * np.kron(q.T, np.eye(2))
    cov = np.linalg.inv(fim)
    assert crb(q, p, Metric.TRACE) == pytest.approx(np.trace(cov).real, rel=1e-10)
    assert crb(q, p, Metric.MAX_EIG) == pytest.approx(np.linalg.eigvalsh(cov)[-1], rel=1e-10)
    sign, logdet = np.linalg.slogdet(cov)
    assert crb(q, p, Metric.LOG_DET) == pytest.approx(logdet.real, rel=1e-10)


def test_kronecker_min_eigenvalue():
    rng = np.random.default_rng(6)
    L, s2 = 50, 2.0
    for _ in range(20):
        q = random_psd(rng, 4)
        big = L / s2 * np.kron(q.T, np.eye(3))
        assert np.linalg.eigvalsh(big)[0] == pytest.approx(
            L / s2 * np.linalg.eigvalsh(q)[0], rel=1e-8, abs=1e-10)


def test_homogeneity_of_all_metrics(ref_params):
    rng = np.random.default_rng(8)
    mn = ref_params.m_tx * ref_params.n_rx_sense
    for _ in range(100):
        q = random_psd(rng, 8)
        c = float(rng.uniform(0.1, 10.0))
        for metric in (Metric.POINT_ANGLE, Metric.TRACE, Metric.MAX_EIG):
            assert crb(c * q, ref_params, metric) == pytest.approx(
                crb(q, ref_params, metric) / c, rel=1e-9)
        assert crb(c * q, ref_params, Metric.LOG_DET) == pytest.approx(
            crb(q, ref_params, Metric.LOG_DET) - mn * math.log(c), rel=1e-9)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.05, 20.0), st.floats(-1.4, 1.4))
def test_point_crb_halves_when_power_doubles(scale, theta):
    p = SystemParams(target_angle=theta)
    q = random_psd(np.random.default_rng(9), 8, scale=scale)
    assert crb_point_angle(2 * q, p) == pytest.approx(crb_point_angle(q, p) / 2, rel=1e-9)


def test_rate_uses_comm_noise():
    ch = ChannelSet.from_matrix(np.diag([1.0, 1.0]))
    p = SystemParams(m_tx=2, n_rx_comm=2, noise_comm=3.0, cpi_len=10)
    assert rate(np.eye(2) * 3.0, ch, p) == pytest.approx(2.0, abs=1e-14)
