"""Brute-force reference solvers and a Monte-Carlo check of the angle CRB.

These routines are deliberately naive.  They share nothing with the solvers
except the metric evaluators in :mod:`crbrate.metrics`, which are used to
re-verify every reported optimum.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.optimize import minimize_scalar

from .channel import ChannelSet, SystemParams, steering_rx, steering_tx
from .metrics import Metric, crb, crb_point_angle, rate, sensing_matrices

__all__ = [
    "OracleReport",
    "grid_oracle_diagonal",
    "grid_oracle_hermitian",
    "mle_variance_check",
]


@dataclass(frozen=True)
class OracleReport:
    best_rate: float
    best_point: np.ndarray
    grid_resolution: float
    feasible_count: int
    max_kkt_violation_of_candidate: float = math.nan
    q: Optional[np.ndarray] = None


def _bound_ok(values, gamma, metric):
    # a hair of slack so grid points exactly on the boundary are kept
    if metric is Metric.LOG_DET:
        return values <= gamma + 1e-12 * max(1.0, abs(gamma))
    return values <= gamma * (1 + 1e-12)


# ------------------------------------------------------------------ diagonal

def _diag_eval(p, gains, noise, metric, params):
    """Rate and CRB of diagonal allocations ``p`` (rows) in the channel eigenbasis."""
    g = np.zeros(p.shape[1])
    g[: gains.size] = gains
    r = np.sum(np.log2(1.0 + p * g / noise), axis=1)
    s2, L, ns, m = params.noise_sense, params.cpi_len, params.n_rx_sense, p.shape[1]
    with np.errstate(divide="ignore"):
        pmin = p.min(axis=1)
        if metric is Metric.TRACE:
            c = np.where(pmin > 0, s2 * ns / L * np.sum(1.0 / np.where(p > 0, p, 1.0), axis=1),
                         np.inf)
        elif metric is Metric.MAX_EIG:
            c = np.where(pmin > 0, s2 / L / np.where(pmin > 0, pmin, 1.0), np.inf)
        else:
            c = np.where(pmin > 0, m * ns * math.log(s2 / L)
                         - ns * np.sum(np.log(np.where(p > 0, p, 1.0)), axis=1), np.inf)
    return r, c


def _simplex_grid(m, lo, hi, steps, power):
    axes = [np.linspace(lo[k], hi[k], steps + 1) for k in range(m)]
    pts = np.array(np.meshgrid(*axes, indexing="ij")).reshape(m, -1).T
    pts = pts[np.all(pts >= 0, axis=1)]
    return pts[pts.sum(axis=1) <= power * (1 + 1e-12)]


def grid_oracle_diagonal(ch: ChannelSet, params: SystemParams, metric, gamma: float,
                         steps: int = 2000, refine: int = 40,
                         candidate_rate: Optional[float] = None) -> OracleReport:
    """Exhaustive search over diagonal allocations in the channel eigenbasis.

    A uniform grid of step ``P/steps`` on the simplex is followed by
    ``refine`` rounds of zoomed grids around the incumbent.  ``gamma`` is the
    CRB bound (natural log for LogDet).
    """
    metric = Metric.parse(metric)
    if not metric.extended:
        raise ValueError("the diagonal oracle covers extended-target metrics")
    m, P = params.m_tx, params.power
    if m > 3:
        raise ValueError("grid oracle is limited to M <= 3")
    gains, noise = ch.gains, params.noise_comm
    if m == 3:
        steps = min(steps, 200)
    pts = _simplex_grid(m, np.zeros(m), np.full(m, P), steps, P)
    r, c = _diag_eval(pts, gains, noise, metric, params)
    ok = _bound_ok(c, gamma, metric)
    feasible = int(ok.sum())
    if feasible == 0:
        return OracleReport(-math.inf, np.full(m, math.nan), P / steps, 0)
    idx = np.flatnonzero(ok)
    best = pts[idx[np.argmax(r[idx])]]
    best_r = float(r[idx].max())
    h = P / steps
    sub = 10 if m == 3 else 20
    for _ in range(refine):
        pts = _simplex_grid(m, best - 2 * h, best + 2 * h, sub, P)
        if pts.size == 0:
            break
        r, c = _diag_eval(pts, gains, noise, metric, params)
        ok = _bound_ok(c, gamma, metric)
        if ok.any():
            i = np.flatnonzero(ok)
            j = i[np.argmax(r[i])]
            if r[j] > best_r:
                best_r, best = float(r[j]), pts[j]
        h *= 4.0 / sub
    q = ch.eigenbasis_covariance(best)
    # independent re-check through the metric module
    val = crb(q, params, metric)
    if not _bound_ok(np.array([val]), gamma * (1 + 1e-9) if metric is not Metric.LOG_DET
                     else gamma + 1e-9 * max(1.0, abs(gamma)), metric)[0]:
        raise AssertionError("oracle optimum failed the independent CRB check")
    best_r = rate(q, ch, params)
    gap = math.nan if candidate_rate is None else max(0.0, best_r - candidate_rate)
    return OracleReport(best_r, best, P / steps, feasible, gap, q)


# ------------------------------------------------------------------ hermitian

class _HermEval:
    """Vectorised rate and CRB for 2x2 ``Q = B [[q11, x+jy], [x-jy, q22]] B^H``."""

    def __init__(self, ch, params, metric, basis):
        self.metric = metric
        self.params = params
        self.basis = basis
        h = ch.h_comm @ basis
        g = h.conj().T @ h / params.noise_comm
        self.g = g
        self.det_g = float(np.real(np.linalg.det(g)))
        if metric is Metric.POINT_ANGLE:
            s = sensing_matrices(params)
            self.k = [basis.conj().T @ k @ basis for k in (s.k_dd, s.k_da, s.k_aa)]

    @staticmethod
    def _tr(k, q11, q22, x, y):
        q12 = x + 1j * y
        return k[0, 0] * q11 + k[1, 1] * q22 + k[0, 1] * np.conj(q12) + k[1, 0] * q12

    def __call__(self, q11, q22, x, y):
        g = self.g
        det_q = q11 * q22 - x * x - y * y
        tr_qg = self._tr(g, q11, q22, x, y).real
        r = np.log2(np.maximum(1.0 + tr_qg + det_q * self.det_g, 1e-300))
        prm = self.params
        s2, L, ns = prm.noise_sense, prm.cpi_len, prm.n_rx_sense
        if self.metric is Metric.POINT_ANGLE:
            t_dd = self._tr(self.k[0], q11, q22, x, y).real
            t_da = self._tr(self.k[1], q11, q22, x, y)
            t_aa = self._tr(self.k[2], q11, q22, x, y).real
            den = t_dd * t_aa - np.abs(t_da) ** 2
            a2 = abs(prm.reflect_coeff) ** 2
            with np.errstate(divide="ignore", invalid="ignore"):
                c = np.where(den > 1e-14 * np.maximum(t_aa * t_dd, 1e-300),
                             s2 * t_aa / (2 * a2 * L * den), np.inf)
            return r, c
        half = 0.5 * (q11 + q22)
        rad = np.sqrt(0.25 * (q11 - q22) ** 2 + x * x + y * y)
        lo, hi = half - rad, half + rad
        pos = lo > 1e-12 * np.maximum(hi, 1e-300)
        with np.errstate(divide="ignore", invalid="ignore"):
            if self.metric is Metric.TRACE:
                c = np.where(pos, s2 * ns / L * (1 / lo + 1 / hi), np.inf)
            elif self.metric is Metric.MAX_EIG:
                c = np.where(pos, s2 / L / lo, np.inf)
            else:
                c = np.where(pos, 2 * ns * math.log(s2 / L) - ns * np.log(np.abs(lo * hi)),
                             np.inf)
        return r, c


def _herm_grid(center, half, n, power):
    axes = [np.linspace(center[k] - half[k], center[k] + half[k], n) for k in range(4)]
    q11, q22, x, y = (a.ravel() for a in np.meshgrid(*axes, indexing="ij"))
    ok = (q11 >= 0) & (q22 >= 0) & (q11 + q22 > 0) & (x * x + y * y <= q11 * q22)
    q11, q22, x, y = q11[ok], q22[ok], x[ok], y[ok]
    # scaling Q up improves rate and every CRB, so only full-power points matter
    s = power / (q11 + q22)
    return q11 * s, q22 * s, x * s, y * s


def grid_oracle_hermitian(ch: ChannelSet, params: SystemParams, gamma: float,
                          steps: int = 40, metric=Metric.POINT_ANGLE, refine: int = 60,
                          candidate_rate: Optional[float] = None) -> OracleReport:
    """Brute-force search over all 2x2 PSD covariances with ``tr Q <= P``.

    The four real parameters ``(q11, q22, Re q12, Im q12)`` are gridded with
    ``steps`` points per axis and each point is scaled to full power (rate
    and all CRBs improve monotonically with a scalar gain), then refined by
    repeated zoomed grids around the incumbent.  Extended metrics are searched in the channel eigenbasis,
    the point metric in the antenna basis; the basis does not restrict the
    search since every PSD matrix is covered either way.
    """
    metric = Metric.parse(metric)
    if params.m_tx != 2:
        raise ValueError("the Hermitian oracle requires M = 2")
    P = params.power
    basis = ch.svd_v if metric.extended else np.eye(2, dtype=complex)
    ev = _HermEval(ch, params, metric, basis)
    center = np.array([P / 2, P / 2, 0.0, 0.0])
    half = np.array([P / 2, P / 2, P / 2, P / 2])
    q11, q22, x, y = _herm_grid(center, half, steps + 1, P)
    r, c = ev(q11, q22, x, y)
    ok = _bound_ok(c, gamma, metric)
    feasible = int(ok.sum())
    if feasible == 0:
        return OracleReport(-math.inf, np.full(4, math.nan), P / steps, 0)
    i = np.flatnonzero(ok)
    j = i[np.argmax(r[i])]
    best = np.array([q11[j], q22[j], x[j], y[j]])
    best_r = float(r[j])
    h = np.full(4, P / steps)
    n = 9
    for _ in range(refine):
        q11, q22, x, y = _herm_grid(best, 2 * h, n, P)
        if q11.size:
            r, c = ev(q11, q22, x, y)
            ok = _bound_ok(c, gamma, metric)
            if ok.any():
                i = np.flatnonzero(ok)
                j = i[np.argmax(r[i])]
                if r[j] > best_r:
                    best_r = float(r[j])
                    best = np.array([q11[j], q22[j], x[j], y[j]])
                    continue
        h *= 0.5
    qb = np.array([[best[0], best[2] + 1j * best[3]], [best[2] - 1j * best[3], best[1]]])
    q = basis @ qb @ basis.conj().T
    q = 0.5 * (q + q.conj().T)
    val = crb(q, params, metric)
    tol = 1e-9 * max(1.0, abs(gamma)) if metric is Metric.LOG_DET else 1e-9 * gamma
    if not val <= gamma + tol:
        raise AssertionError("oracle optimum failed the independent CRB check")
    best_r = rate(q, ch, params)
    gap = math.nan if candidate_rate is None else max(0.0, best_r - candidate_rate)
    return OracleReport(best_r, best, P / steps, feasible, gap, q)


# ------------------------------------------------------------------ Monte Carlo

def _steer_cols(thetas, n):
    return np.stack([steering_tx(t, n) for t in thetas], axis=1)


def _ml_score(s_mat, r_mat, a, b, ns):
    num = np.abs(np.einsum("ig,ij,jg->g", b.conj(), s_mat, a.conj())) ** 2
    den = ns * np.real(np.einsum("ig,ij,jg->g", a, r_mat, a.conj()))
    return num / den


def _ml_angle(s_mat, r_mat, params, grid, a_grid, b_grid):
    """Concentrated ML estimate of the angle from ``S = Y X^H`` and ``R = X X^H``."""
    m, ns = params.m_tx, params.n_rx_sense
    k = int(np.argmax(_ml_score(s_mat, r_mat, a_grid, b_grid, ns)))
    step = grid[1] - grid[0]
    lo, hi = grid[max(k - 1, 0)], grid[min(k + 1, grid.size - 1)]

    def neg(t):
        return -_ml_score(s_mat, r_mat, steering_tx(t, m)[:, None],
                          steering_rx(t, ns)[:, None], ns)[0]

    res = minimize_scalar(neg, bounds=(lo, hi), method="bounded",
                          options={"xatol": step * 1e-9})
    return float(res.x)


def mle_variance_check(params: SystemParams, q: np.ndarray, trials: int = 10_000,
                       seed: int = 12345, grid_points: int = 2048) -> Tuple[float, float]:
    """Empirical MSE of the ML angle estimate versus the angle CRB.

    Simulates ``Y = alpha b a^T X + Z`` over ``L`` snapshots with
    ``X ~ CN(0, Q)`` and white noise of power ``sigma_s^2``.  Returns
    ``(empirical_variance, crb)``.  Near-efficiency needs a high SNR, e.g.
    ``|alpha|^2 P L / sigma_s^2 >= 1e3``.
    """
    rng = np.random.default_rng(seed)
    m, ns, L = params.m_tx, params.n_rx_sense, params.cpi_len
    th0 = params.target_angle
    a = steering_tx(th0, m)
    b = steering_rx(th0, ns)
    resp = params.reflect_coeff * np.outer(b, a)
    ev, u = np.linalg.eigh(0.5 * (q + q.conj().T))
    root = (u * np.sqrt(np.maximum(ev, 0.0))) @ u.conj().T
    grid = np.linspace(-math.pi / 2, math.pi / 2, grid_points)
    a_grid, b_grid = _steer_cols(grid, m), _steer_cols(grid, ns)
    sn = math.sqrt(params.noise_sense / 2.0)
    err = np.empty(trials)
    for t in range(trials):
        w = (rng.standard_normal((m, L)) + 1j * rng.standard_normal((m, L))) / math.sqrt(2.0)
        x = root @ w
        z = sn * (rng.standard_normal((ns, L)) + 1j * rng.standard_normal((ns, L)))
        y = resp @ x + z
        est = _ml_angle(y @ x.conj().T, x @ x.conj().T, params, grid, a_grid, b_grid)
        err[t] = est - th0
    return float(np.mean(err ** 2)), crb_point_angle(q, params)
