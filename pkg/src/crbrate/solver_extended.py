"""Rate maximisation under Trace, MaxEig and log-Det CRB constraints.

For the extended target the optimal covariance shares the right singular
vectors of the communication channel, so each problem reduces to a power
allocation ``p`` over the M eigen-subchannels.  Subchannels ``k <= r`` carry
data with noise-to-gain ratio ``c_k = sigma_c^2 / zeta_k^2``; the remaining
``M - r`` subchannels serve sensing only.

Trace and log-Det use a two-dimensional dual search (ellipsoid method, then
a Newton polish on the active equations).  MaxEig has a one-dimensional dual
found by bisection.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Dict

import numpy as np
from scipy.optimize import brentq, root

from .channel import ChannelSet, SystemParams
from .corner import rate_max_waterfill, waterfill
from .ellipsoid import Cut, ellipsoid_minimize
from .metrics import LN2, Metric, crb, rate
from .outcome import InfeasibleError, SolveOutcome, Status

__all__ = [
    "PowerAllocation",
    "cubic_positive_root",
    "trace_threshold",
    "maxeig_threshold",
    "logdet_threshold",
    "trace_allocation",
    "logdet_allocation",
    "maxeig_allocation",
    "solve_trace",
    "solve_maxeig",
    "solve_logdet",
    "solve_extended",
    "asymptotic_allocation",
    "check_ordering",
    "KKT_TOL",
]

log = logging.getLogger(__name__)

KKT_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class PowerAllocation:
    """Per-subchannel powers in the right-singular basis of the channel."""

    p: np.ndarray
    metric: Metric
    rank_r: int
    power: float
    duals: Dict[str, float] = field(default_factory=dict)


# ---------------------------------------------------------------- thresholds

def trace_threshold(params: SystemParams, gamma2: float) -> float:
    """``L Gamma_2 / (sigma_s^2 N_s)``: bound on ``sum_k 1/p_k``."""
    return params.cpi_len * gamma2 / (params.noise_sense * params.n_rx_sense)


def maxeig_threshold(params: SystemParams, gamma3: float) -> float:
    """``sigma_s^2 / (L Gamma_3)``: floor on every ``p_k``."""
    return params.noise_sense / (params.cpi_len * gamma3)


def logdet_threshold(params: SystemParams, ln_gamma4: float) -> float:
    """Floor on ``sum_k ln p_k`` implied by a log-Det CRB bound ``ln Gamma_4``."""
    return (params.m_tx * math.log(params.noise_sense / params.cpi_len)
            - ln_gamma4 / params.n_rx_sense)


# ---------------------------------------------------------------- cubic root

def cubic_positive_root(a, b, c, d):
    """Largest real root of ``a x^3 + b x^2 + c x + d`` with ``a > 0``.

    Works elementwise.  Uses Cardano's surd form when the discriminant is
    non-negative and the trigonometric form otherwise, then polishes with
    Newton steps.  For the stationarity cubics here (``c, d <= 0``) the largest root
    is the only positive one.
    """
    a, b, c, d = np.broadcast_arrays(*(np.asarray(x, dtype=float) for x in (a, b, c, d)))
    t1 = b / (3 * a)
    t2 = (27 * a * a * d - 9 * a * b * c + 2 * b ** 3) / (54 * a ** 3)
    t3 = (3 * a * c - b * b) / (9 * a * a)
    disc = t2 * t2 + t3 ** 3
    y = np.empty_like(t1)
    pos = disc >= 0
    if np.any(pos):
        s = np.sqrt(disc[pos])
        single = np.cbrt(-t2[pos] + s) + np.cbrt(-t2[pos] - s)
        # a vanishing discriminant means a double root at -single/2, possibly the larger one
        tiny = disc[pos] <= 1e-12 * np.maximum(t2[pos] ** 2, np.abs(t3[pos]) ** 3)
        y[pos] = np.where(tiny, np.maximum(single, -0.5 * single), single)
    neg = ~pos
    if np.any(neg):
        r = np.sqrt(-t3[neg])
        arg = np.clip(-t2[neg] / r ** 3, -1.0, 1.0)
        y[neg] = 2 * r * np.cos(np.arccos(arg) / 3)
    x = y - t1
    # the shift by b/3a cancels badly when the roots differ in scale; with
    # c <= 0 < -d the positive root is unique and f(0) < 0, so polish inside
    # the bracket [0, Fujiwara bound] and fall back to bisection when needed
    one = (c <= 0) & (d < 0)
    lo = np.zeros_like(x)
    hi = 2 * np.maximum.reduce([np.abs(b) / a, np.sqrt(np.abs(c) / a),
                                np.cbrt(np.abs(d) / (2 * a))])
    x = np.where(one & ~((x > lo) & (x < hi)), 0.5 * hi, x)
    for _ in range(200):
        f = ((a * x + b) * x + c) * x + d
        fp = (3 * a * x + 2 * b) * x + c
        lo = np.where(one & (f < 0), x, lo)
        hi = np.where(one & (f > 0), x, hi)
        ok = np.abs(fp) > 1e-300
        nx = x - np.where(ok, f / np.where(ok, fp, 1.0), 0.0)
        bad = one & ~((nx > lo) & (nx < hi))
        nx = np.where(bad, 0.5 * (lo + hi), nx)
        done = np.abs(nx - x) <= 4e-16 * np.abs(nx)
        x = np.where(f == 0, x, nx)
        if np.all(done | (f == 0)):
            break
    return x


# ---------------------------------------------------------------- allocations

def trace_allocation(c, n_sense: int, mu: float, v: float) -> np.ndarray:
    """Maximiser of the Trace-scenario Lagrangian for given duals."""
    c = np.asarray(c, dtype=float)
    if mu <= 0.0:
        p = np.maximum(1.0 / (v * LN2) - c, 0.0)
    else:
        p = cubic_positive_root(v, v * c - 1.0 / LN2, -mu, -mu * c)
        p = np.maximum(p, 0.0)
    return np.concatenate([p, np.full(n_sense, math.sqrt(max(mu, 0.0) / v))])


def logdet_allocation(c, n_sense: int, mu: float, v: float) -> np.ndarray:
    """Maximiser of the log-Det-scenario Lagrangian for given duals."""
    c = np.asarray(c, dtype=float)
    mu = max(mu, 0.0)
    bb = v * c - mu - 1.0 / LN2
    disc = np.sqrt(bb * bb + 4.0 * v * mu * c)
    # avoid cancellation when bb > 0
    p = np.where(bb <= 0, (-bb + disc) / (2.0 * v),
                 2.0 * mu * c / np.where(bb > 0, bb + disc, 1.0))
    return np.concatenate([np.maximum(p, 0.0), np.full(n_sense, mu / v)])


def maxeig_allocation(c, n_sense: int, v: float, floor: float) -> np.ndarray:
    c = np.asarray(c, dtype=float)
    p = np.maximum(1.0 / (v * LN2) - c, floor)
    return np.concatenate([p, np.full(n_sense, floor)])


def _rate_terms(p_r, c):
    return float(np.sum(np.log1p(p_r / c)) / LN2)


# ---------------------------------------------------------------- common

def _noise_ratios(ch: ChannelSet, params: SystemParams) -> np.ndarray:
    return params.noise_comm / ch.gains


def _outcome(ch, params, metric, gamma, p, duals, kkt, status, iters, t0,
             active, info=None):
    q = ch.eigenbasis_covariance(p)
    crbs = {m: crb(q, params, m) for m in Metric}
    return SolveOutcome(
        q=q, rate=rate(q, ch, params), crb=crbs, duals=duals, kkt_residuals=kkt,
        status=status, iterations=iters, wall_time=time.perf_counter() - t0,
        metric=metric, gamma=gamma, constraint_active=active,
        power_alloc=np.asarray(p, dtype=float), info=info or {})


def _status(kkt: Dict[str, float]) -> Status:
    return Status.OPTIMAL if max(kkt.values(), default=0.0) <= KKT_TOL else Status.MAX_ITERATIONS


class _SmoothScenario:
    """Trace or log-Det scenario: two duals ``(mu, v)``, smooth allocation."""

    def __init__(self, metric: Metric, c, m: int, power: float, target: float):
        self.metric = metric
        self.c = np.asarray(c, dtype=float)
        self.r = self.c.size
        self.n_sense = m - self.r
        self.power = power
        self.target = target
        # dual scaling: mu_hat = mu * mu_scale, v_hat = v * power
        self.mu_scale = target if metric is Metric.TRACE else 1.0

    def alloc(self, mu, v):
        if self.metric is Metric.TRACE:
            return trace_allocation(self.c, self.n_sense, mu, v)
        return logdet_allocation(self.c, self.n_sense, mu, v)

    def phi(self, p):
        """Constraint function written as ``phi(p) <= 0``."""
        with np.errstate(divide="ignore"):
            if self.metric is Metric.TRACE:
                return float(np.sum(1.0 / p)) - self.target
            return self.target - float(np.sum(np.log(p)))

    def lagrangian(self, p, mu, v):
        with np.errstate(divide="ignore", invalid="ignore"):
            ph = self.phi(p)
        pen = 0.0 if mu == 0.0 else mu * ph
        return _rate_terms(p[: self.r], self.c) - pen - v * (float(np.sum(p)) - self.power)

    def oracle(self, x):
        mu_h, v_h = x
        if v_h <= 0.0:
            return Cut(False, -v_h + 1e-300, np.array([0.0, -1.0]))
        if mu_h <= 0.0 and (self.n_sense > 0 or mu_h < 0.0):
            return Cut(False, -mu_h + 1e-300, np.array([-1.0, 0.0]))
        mu, v = mu_h / self.mu_scale, v_h / self.power
        p = self.alloc(mu, v)
        g = self.lagrangian(p, mu, v)
        grad = np.array([-self.phi(p) / self.mu_scale, (self.power - np.sum(p)) / self.power])
        if not np.all(np.isfinite(grad)):
            return Cut(False, 1.0, np.array([-1.0, 0.0]))
        return Cut(True, g, grad)

    def stationarity(self, p, mu, v):
        """Per-subchannel derivative of the Lagrangian, relative to its scale."""
        r = self.r
        comm = np.zeros_like(p)
        comm[:r] = 1.0 / (LN2 * (p[:r] + self.c))
        if self.metric is Metric.TRACE:
            sens = mu / p ** 2
        else:
            sens = mu / p
        res = comm + sens - v
        return np.abs(res) / (comm + sens + v)

    def dp(self, p, mu, v):
        """Implicit derivatives ``dp/dmu`` and ``dp/dv`` of the allocation."""
        r = self.r
        fp = np.zeros_like(p)
        fp[:r] = -1.0 / (LN2 * (p[:r] + self.c) ** 2)
        if self.metric is Metric.TRACE:
            fp += -2.0 * mu / p ** 3
            fmu = 1.0 / p ** 2
        else:
            fp += -mu / p ** 2
            fmu = 1.0 / p
        return -fmu / fp, 1.0 / fp

    def dphi(self, p):
        return -1.0 / p ** 2 if self.metric is Metric.TRACE else -1.0 / p

    def polish(self, mu, v):
        """Newton solve of ``sum p = P`` and ``phi(p) = 0`` in log-duals."""

        def fun(z):
            m_, v_ = math.exp(z[0]), math.exp(z[1])
            p = self.alloc(m_, v_)
            dmu, dv = self.dp(p, m_, v_)
            dph = self.dphi(p)
            scale_phi = abs(self.target) if self.metric is Metric.TRACE else 1.0
            f = np.array([(np.sum(p) - self.power) / self.power, self.phi(p) / scale_phi])
            jac = np.array([
                [np.sum(dmu) * m_ / self.power, np.sum(dv) * v_ / self.power],
                [np.sum(dph * dmu) * m_ / scale_phi, np.sum(dph * dv) * v_ / scale_phi],
            ])
            return f, jac

        z0 = np.log([max(mu, 1e-300), max(v, 1e-300)])
        sol = root(fun, z0, jac=True, method="hybr", options={"xtol": 1e-15})
        mu1, v1 = np.exp(sol.x)
        return float(mu1), float(v1)


def _kkt_smooth(sc: _SmoothScenario, p, mu, v, g):
    rate_val = _rate_terms(p[: sc.r], sc.c)
    ph = sc.phi(p)
    phs = abs(sc.target) if sc.metric is Metric.TRACE else max(1.0, abs(sc.target))
    gap = sc.lagrangian(p, mu, v) - rate_val if g is None else g - rate_val
    return {
        "stationarity": float(np.max(sc.stationarity(p, mu, v))),
        "power_feasibility": max(0.0, float(np.sum(p)) - sc.power) / sc.power,
        "crb_feasibility": max(0.0, ph) / phs,
        "dual_feasibility": max(0.0, -mu, -v),
        "slackness_power": v * sc.power * abs(float(np.sum(p)) - sc.power) / sc.power
        / max(1.0, v * sc.power),
        "slackness_crb": mu * sc.mu_scale * abs(ph) / phs,
        "duality_gap": abs(gap) / max(1.0, rate_val),
    }


def _solve_smooth(ch: ChannelSet, params: SystemParams, metric: Metric,
                  gamma: float, target: float, feasible_floor: bool,
                  at_boundary: bool) -> SolveOutcome:
    t0 = time.perf_counter()
    m, P = params.m_tx, params.power
    c = _noise_ratios(ch, params)
    sc = _SmoothScenario(metric, c, m, P, target)
    if not feasible_floor:
        raise InfeasibleError(f"{metric.label} bound {gamma!r} is below the minimum CRB")
    if at_boundary:
        p = np.full(m, P / m)
        kkt = {"power_feasibility": 0.0,
               "crb_feasibility": max(0.0, sc.phi(p)) / max(1.0, abs(target))}
        return _outcome(ch, params, metric, gamma, p, {"mu": math.nan, "v": math.nan},
                        kkt, Status.OPTIMAL, 0, t0, True, {"path": "equal_power"})
    # slack constraint: water-filling already meets it
    wf = rate_max_waterfill(ch, params)
    with np.errstate(divide="ignore"):
        phi_wf = sc.phi(wf.power_alloc)
    if phi_wf <= 0.0:
        p = wf.power_alloc
        v = 1.0 / (LN2 * (p[0] + c[0]))
        kkt = _kkt_smooth(sc, p, 0.0, v, None)
        return _outcome(ch, params, metric, gamma, p, {"mu": 0.0, "v": v}, kkt,
                        _status(kkt), 0, t0, False, {"path": "waterfill"})
    radius = 1e3
    for _ in range(6):
        res = ellipsoid_minimize(sc.oracle, x0=[1.0, 1.0], radius=radius, rtol=1e-10,
                                 max_iter=10_000)
        # a negative gap means the minimiser was outside the initial ball
        if not (res.hit_boundary or res.gap < -1e-9 * max(1.0, abs(res.fun))):
            break
        radius *= 10.0
    mu, v = res.x[0] / sc.mu_scale, res.x[1] / P
    mu_p, v_p = sc.polish(mu, v)
    p_p = sc.alloc(mu_p, v_p)
    kkt_p = _kkt_smooth(sc, p_p, mu_p, v_p, None)
    p_e = sc.alloc(mu, v)
    kkt_e = _kkt_smooth(sc, p_e, mu, v, None)
    if max(kkt_p.values()) <= max(kkt_e.values()):
        mu, v, p, kkt = mu_p, v_p, p_p, kkt_p
    else:
        p, kkt = p_e, kkt_e
    if kkt["power_feasibility"] > 0 or kkt["crb_feasibility"] > 0:
        p = _restore_feasible(sc, p)
        kkt = _kkt_smooth(sc, p, mu, v, None)
    status = _status(kkt)
    if status is not Status.OPTIMAL:
        log.warning("%s solve did not certify optimality: %s", metric.label, kkt)
    return _outcome(ch, params, metric, gamma, p, {"mu": mu, "v": v}, kkt, status,
                    res.iterations, t0, True,
                    {"path": "dual", "ellipsoid_gap": res.gap})


def _restore_feasible(sc: _SmoothScenario, p):
    """Pull a marginally infeasible allocation back inside both constraints."""
    p = p * min(1.0, sc.power / float(np.sum(p)))
    if sc.phi(p) <= 0.0:
        return p
    eq = np.full(p.size, sc.power / p.size)
    t = brentq(lambda s: sc.phi((1 - s) * p + s * eq), 0.0, 1.0, xtol=1e-15)
    return (1 - t) * p + t * eq


# ---------------------------------------------------------------- public solvers

def solve_trace(ch: ChannelSet, params: SystemParams, gamma2: float) -> SolveOutcome:
    """Maximise rate subject to ``Trace-CRB <= gamma2`` and the power budget.

    Raises
    ------
    InfeasibleError
        If ``gamma2`` is below the Trace-CRB of equal power allocation.
    """
    m, P = params.m_tx, params.power
    gt = trace_threshold(params, gamma2)
    floor = m * m / P
    return _solve_smooth(ch, params, Metric.TRACE, gamma2, gt,
                         feasible_floor=gt >= floor * (1 - 1e-12),
                         at_boundary=gt <= floor * (1 + 1e-12))


def solve_logdet(ch: ChannelSet, params: SystemParams, ln_gamma4: float) -> SolveOutcome:
    """Maximise rate subject to ``ln Det-CRB <= ln_gamma4``.

    The bound is passed in natural-log form; the linear value underflows.
    """
    m, P = params.m_tx, params.power
    gd = logdet_threshold(params, ln_gamma4)
    top = m * math.log(P / m)
    tol = 1e-12 * max(1.0, abs(top))
    return _solve_smooth(ch, params, Metric.LOG_DET, ln_gamma4, gd,
                         feasible_floor=gd <= top + tol,
                         at_boundary=gd >= top - tol)


def solve_maxeig(ch: ChannelSet, params: SystemParams, gamma3: float) -> SolveOutcome:
    """Maximise rate subject to ``MaxEig-CRB <= gamma3``.

    The bound turns into a floor ``p_k >= sigma_s^2/(L gamma3)`` on every
    subchannel, so the optimum is water-filling with a floor.
    """
    t0 = time.perf_counter()
    m, P = params.m_tx, params.power
    floor = maxeig_threshold(params, gamma3)
    if m * floor > P * (1 + 1e-12):
        raise InfeasibleError(f"maxeig bound {gamma3!r} is below the minimum CRB")
    c = _noise_ratios(ch, params)
    r = c.size
    ns = m - r
    if m * floor >= P * (1 - 1e-12):
        p = np.full(m, P / m)
        kkt = {"power_feasibility": 0.0, "crb_feasibility": 0.0}
        return _outcome(ch, params, Metric.MAX_EIG, gamma3, p, {"v": math.nan}, kkt,
                        Status.OPTIMAL, 0, t0, True, {"path": "equal_power"})

    def excess(v):
        return float(np.sum(maxeig_allocation(c, ns, v, floor))) - P

    # bracket: v small gives huge powers, v large gives the floor everywhere
    hi = 1e3 / (LN2 * (floor + c.min()))
    lo = hi * 1e-3
    while excess(lo) < 0:
        lo *= 1e-3
    while excess(hi) > 0:
        hi *= 1e3
    v = brentq(excess, lo, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)
    iters = 1
    # exact active-set refinement
    active = (1.0 / (v * LN2) - c) > floor
    for iters in range(1, m + 2):
        if not np.any(active):
            break
        level = (P - (m - active.sum()) * floor + c[active].sum()) / active.sum()
        new = (level - c) > floor
        if np.array_equal(new, active):
            v = 1.0 / (LN2 * level)
            break
        active = new
    p = maxeig_allocation(c, ns, v, floor)
    p *= P / p.sum() if abs(p.sum() - P) > 0 else 1.0
    mus = np.concatenate([np.maximum(v - 1.0 / (LN2 * (p[:r] + c)), 0.0), np.full(ns, v)])
    stat = np.zeros(m)
    comm = np.zeros(m)
    comm[:r] = 1.0 / (LN2 * (p[:r] + c))
    stat = np.abs(comm - v + mus) / (comm + v + mus)
    kkt = {
        "stationarity": float(stat.max()),
        "power_feasibility": max(0.0, p.sum() - P) / P,
        "crb_feasibility": max(0.0, floor - p.min()) / floor,
        "dual_feasibility": 0.0,
        "slackness_crb": float(np.max(mus * np.abs(p - floor)) / v / P),
        "slackness_power": 0.0,
    }
    constraint_active = bool(ns > 0 or np.any(mus[:r] > 1e-8 * v))
    return _outcome(ch, params, Metric.MAX_EIG, gamma3, p,
                    {"v": v, "mu_max": float(mus.max())}, kkt, _status(kkt), iters, t0,
                    constraint_active, {"path": "bisection"})


def solve_extended(ch: ChannelSet, params: SystemParams, metric, gamma: float) -> SolveOutcome:
    metric = Metric.parse(metric)
    if metric is Metric.TRACE:
        return solve_trace(ch, params, gamma)
    if metric is Metric.MAX_EIG:
        return solve_maxeig(ch, params, gamma)
    if metric is Metric.LOG_DET:
        return solve_logdet(ch, params, gamma)
    raise ValueError("point-target scenario is handled by solver_point")


# ---------------------------------------------------------------- structure

def asymptotic_allocation(ch: ChannelSet, params: SystemParams, metric, gamma: float
                          ) -> PowerAllocation:
    """High-power limit of the optimal allocation.

    Trace spreads ``(M-r)^2/Gamma_2'`` of the budget over the sensing-only
    subchannels, MaxEig gives them the floor, log-Det gives them nothing; the
    rest is split equally over the ``r`` data subchannels.
    """
    metric = Metric.parse(metric)
    m, r, P = params.m_tx, ch.rank_r, params.power
    ns = m - r
    if metric is Metric.TRACE:
        gt = trace_threshold(params, gamma)
        sens = ns / gt
    elif metric is Metric.MAX_EIG:
        sens = maxeig_threshold(params, gamma)
    elif metric is Metric.LOG_DET:
        sens = 0.0
    else:
        raise ValueError("asymptotic allocation is defined for extended metrics only")
    data = (P - ns * sens) / r
    p = np.concatenate([np.full(r, data), np.full(ns, sens)])
    return PowerAllocation(p=p, metric=metric, rank_r=r, power=P)


def check_ordering(alloc: PowerAllocation, slack: float = 1e-8) -> bool:
    """True iff ``p_1 >= ... >= p_r >= p_{r+1} = ... = p_M > 0`` up to ``slack * P``."""
    p = np.asarray(alloc.p, dtype=float)
    tol = slack * alloc.power
    if p.size == 0 or np.any(p <= 0):
        return False
    if np.any(np.diff(p) > tol):
        return False
    tail = p[alloc.rank_r:]
    return bool(tail.size == 0 or np.ptp(tail) <= tol)


def allocation_of(outcome: SolveOutcome, ch: ChannelSet, params: SystemParams) -> PowerAllocation:
    return PowerAllocation(p=outcome.power_alloc, metric=outcome.metric, rank_r=ch.rank_r,
                           power=params.power, duals=dict(outcome.duals))
