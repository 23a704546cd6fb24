"""Rate maximisation under a point-target angle-CRB constraint.

The CRB bound ``Gamma_1`` is rewritten through a Schur complement as the
2x2 linear matrix inequality

    F(Q) = [[tr(Kdd Q) - 1/G, conj(tr(Kda Q))], [tr(Kda Q), tr(Kaa Q)]] >= 0

with ``G = 2 Gamma_1 L |alpha|^2 / sigma_s^2``.  The problem is solved in
the dual: five real multipliers (``lambda`` for power and the entries of a
2x2 Hermitian ``Z``) are searched with the ellipsoid method.  For fixed
multipliers the Lagrangian maximiser is a water-filling solution on the
whitened channel ``H C^{-1/2}``.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import brentq, least_squares

from .channel import ChannelSet, SystemParams
from .corner import crb_min_point, point_crb_min_value, rate_max_waterfill
from .ellipsoid import Cut, ellipsoid_minimize
from .metrics import (LN2, Metric, crb, crb_point_angle, point_fisher_terms, rate,
                      sensing_matrices)
from .outcome import InfeasibleError, SolveOutcome, Status

__all__ = [
    "DualPoint",
    "DualEval",
    "crb_cap",
    "build_c_matrix",
    "dual_eval",
    "constraint_matrix",
    "solve_p1",
    "KKT_TOL",
]

log = logging.getLogger(__name__)

KKT_TOL = 1e-6


@dataclass(frozen=True)
class DualPoint:
    """Power multiplier ``lam`` and the 2x2 Hermitian multiplier ``Z``.

    ``Z = [[alpha_d, beta_d + j gamma_d], [beta_d - j gamma_d, nu_d]]``.
    """

    lam: float
    alpha_d: float = 0.0
    beta_d: float = 0.0
    gamma_d: float = 0.0
    nu_d: float = 0.0

    @classmethod
    def from_vector(cls, x) -> "DualPoint":
        return cls(*map(float, x))

    def as_vector(self) -> np.ndarray:
        return np.array([self.lam, self.alpha_d, self.beta_d, self.gamma_d, self.nu_d])

    def z_matrix(self) -> np.ndarray:
        off = self.beta_d + 1j * self.gamma_d
        return np.array([[self.alpha_d, off], [np.conj(off), self.nu_d]])


@dataclass(frozen=True, eq=False)
class DualEval:
    value: float
    q: Optional[np.ndarray]
    bounded: bool
    c_matrix: np.ndarray
    subgradient: Optional[np.ndarray] = None


def crb_cap(params: SystemParams, gamma1: float) -> float:
    """Scaled bound ``2 Gamma_1 L |alpha|^2 / sigma_s^2``."""
    return 2.0 * gamma1 * params.cpi_len * abs(params.reflect_coeff) ** 2 / params.noise_sense


def _basis(params: SystemParams):
    """Matrices ``B_i`` with ``C = sum_i x_i B_i`` for ``x = (lam, alpha, beta, gamma, nu)``."""
    s = sensing_matrices(params)
    m = params.m_tx
    return np.stack([
        np.eye(m, dtype=complex),
        -s.k_dd,
        -(s.k_da + s.k_ad) if hasattr(s, "k_ad") else -(s.k_da + s.k_da.conj().T),
        -1j * (s.k_da - s.k_da.conj().T),
        -s.k_aa,
    ])


def build_c_matrix(dual: DualPoint, params: SystemParams) -> np.ndarray:
    """``C = lam I - (alpha Kdd + (beta + j gamma) Kda + (beta - j gamma) Kda^H + nu Kaa)``."""
    s = sensing_matrices(params)
    w = dual.beta_d + 1j * dual.gamma_d
    c = dual.lam * np.eye(params.m_tx) - (
        dual.alpha_d * s.k_dd + w * s.k_da + np.conj(w) * s.k_da.conj().T + dual.nu_d * s.k_aa)
    return 0.5 * (c + c.conj().T)


def constraint_matrix(q: np.ndarray, params: SystemParams, cap: float) -> np.ndarray:
    """The 2x2 Hermitian matrix ``F(Q)`` whose PSD-ness encodes the CRB bound."""
    t_dd, t_da, t_aa = point_fisher_terms(q, sensing_matrices(params))
    return np.array([[t_dd - 1.0 / cap, np.conj(t_da)], [t_da, t_aa]])


def _subgradient(q, params, cap):
    s = sensing_matrices(params)
    t_dd, t_da, t_aa = point_fisher_terms(q, s)
    return np.array([
        params.power - float(np.real(np.trace(q))),
        t_dd - 1.0 / cap,
        2.0 * t_da.real,
        -2.0 * t_da.imag,
        t_aa,
    ])


def _whitened_waterfill(h, basis, scale, noise):
    """Maximise ``log2 det(I + H X S X^H H^H/noise) - tr S`` over ``S >= 0``.

    ``basis`` is ``X`` (M x d) and ``scale`` multiplies its columns, i.e. the
    channel seen by the allocation is ``H X diag(scale)``.
    """
    w = (h @ basis) * scale
    _, zeta, vh = np.linalg.svd(w, full_matrices=False)
    pbar = np.maximum(1.0 / LN2 - noise / np.maximum(zeta ** 2, 1e-300), 0.0)
    pbar[zeta <= 0] = 0.0
    val = float(np.sum(np.log2(1.0 + zeta ** 2 * pbar / noise) - pbar))
    v = vh.conj().T
    inner = (v * pbar) @ v.conj().T
    x = basis * scale
    q = x @ inner @ x.conj().T
    return val, 0.5 * (q + q.conj().T)


def dual_eval(dual: DualPoint, ch: ChannelSet, params: SystemParams, cap: float,
              tol: float = 1e-9) -> DualEval:
    """Dual function value and a maximiser of the Lagrangian.

    Returns ``bounded=False`` when ``C`` has a negative eigenvalue or when
    the channel has energy in the null space of ``C``; in both cases the
    Lagrangian is unbounded above.  Among non-unique maximisers the one
    supported on the positive eigenspace of ``C`` is returned.
    """
    c = build_c_matrix(dual, params)
    ev, u = np.linalg.eigh(c)
    top = max(abs(ev[0]), abs(ev[-1]), 1e-300)
    if ev[0] < -tol * top:
        return DualEval(math.inf, None, False, c)
    pos = ev > tol * top
    u1, u0 = u[:, pos], u[:, ~pos]
    h = ch.h_comm
    if u0.shape[1] and np.linalg.norm(h @ u0) > tol * max(np.linalg.norm(h), 1e-300):
        return DualEval(math.inf, None, False, c)
    val, q = _whitened_waterfill(h, u1, 1.0 / np.sqrt(ev[pos]), params.noise_comm)
    g = val + dual.lam * params.power - dual.alpha_d / cap
    return DualEval(g, q, True, c, _subgradient(q, params, cap))


class _P1Dual:
    """Dual objective in normalised coordinates ``x = D x_hat``."""

    def __init__(self, ch: ChannelSet, params: SystemParams, cap: float):
        self.ch, self.params, self.cap = ch, params, cap
        P = params.power
        s_a = params.n_rx_sense * params.m_tx * P
        self.s_a = s_a
        self.d = np.array([1.0 / P, cap, math.sqrt(cap / s_a), math.sqrt(cap / s_a), 1.0 / s_a])
        self.basis = _basis(params)
        self.h = ch.h_comm
        self.noise = params.noise_comm
        self.evals = 0

    def c_of(self, xh):
        x = self.d * xh
        c = np.tensordot(x, self.basis, axes=1)
        return 0.5 * (c + c.conj().T)

    def z_of(self, xh):
        x = self.d * xh
        return DualPoint.from_vector(x).z_matrix()

    def zhat(self, xh):
        off = xh[2] + 1j * xh[3]
        return np.array([[xh[1], off], [np.conj(off), xh[4]]])

    def primal(self, xh):
        """Lagrangian maximiser for ``C > 0``; returns ``(value, Q)`` or None."""
        pc = self.params.power * self.c_of(xh)
        ev, u = np.linalg.eigh(pc)
        if ev[0] <= 1e-12 * max(abs(ev[-1]), 1e-300):
            return None
        # Q = C^{-1/2} S C^{-1/2} with C^{-1/2} = sqrt(P) U diag(ev^{-1/2}) U^H
        val, q = _whitened_waterfill(self.h, u, math.sqrt(self.params.power) / np.sqrt(ev),
                                     self.noise)
        return val, q

    def oracle(self, xh):
        self.evals += 1
        if xh[0] < 0.0:
            return Cut(False, -xh[0], np.array([-1.0, 0, 0, 0, 0]))
        zh = self.zhat(xh)
        zev, zv = np.linalg.eigh(zh)
        if zev[0] < 0.0:
            z1, z2 = zv[:, 0]
            vec = np.array([0.0, abs(z1) ** 2, 2 * (np.conj(z1) * z2).real,
                            -2 * (np.conj(z1) * z2).imag, abs(z2) ** 2])
            return Cut(False, -zev[0], -vec)
        pc = self.params.power * self.c_of(xh)
        ev, u = np.linalg.eigh(pc)
        thr = 1e-12 * max(abs(ev[-1]), abs(ev[0]), 1e-300)
        if ev[0] <= thr:
            qv = u[:, 0]
            grad = self.params.power * self.d * np.real(
                np.einsum("i,kij,j->k", qv.conj(), self.basis, qv))
            return Cut(False, thr - ev[0], -grad)
        val, q = _whitened_waterfill(self.h, u, math.sqrt(self.params.power) / np.sqrt(ev),
                                     self.noise)
        g = self.value(xh, val)
        sg = _subgradient(q, self.params, self.cap) * self.d
        return Cut(True, g, sg)

    def value(self, xh, val):
        x = self.d * xh
        return val + x[0] * self.params.power - x[1] / self.cap


def _kkt(dual_obj: _P1Dual, xh, q, g_val):
    params, cap = dual_obj.params, dual_obj.cap
    P = params.power
    x = dual_obj.d * xh
    r = rate(q, dual_obj.ch, params)
    f = constraint_matrix(q, params, cap)
    sc = np.array([math.sqrt(cap), 1.0 / math.sqrt(dual_obj.s_a)])
    fh = f * np.outer(sc, sc)
    zh = dual_obj.zhat(xh)
    fh_norm = max(np.linalg.norm(fh), 1e-300)
    zh_norm = max(np.linalg.norm(zh), 1.0)
    pc = P * dual_obj.c_of(xh)
    h = dual_obj.ch.h_comm
    s = params.noise_comm * np.eye(h.shape[0]) + h @ q @ h.conj().T
    grad_r = h.conj().T @ np.linalg.solve(s, h) / LN2
    lag = P * (dual_obj.c_of(xh) - grad_r)
    lag = 0.5 * (lag + lag.conj().T)
    lag_scale = max(1.0, np.linalg.norm(P * grad_r))
    tr_q = float(np.real(np.trace(q)))
    crb_val = crb_point_angle(q, params)
    gamma1 = cap * params.noise_sense / (2 * params.cpi_len * abs(params.reflect_coeff) ** 2)
    return {
        "power_feasibility": max(0.0, tr_q - P) / P,
        "crb_feasibility": max(0.0, crb_val / gamma1 - 1.0),
        "lmi_feasibility": max(0.0, -float(np.linalg.eigvalsh(fh)[0])) / fh_norm,
        "dual_feasibility": max(0.0, -x[0] * P, -float(np.linalg.eigvalsh(zh)[0]) / zh_norm,
                                -float(np.linalg.eigvalsh(pc)[0]) / max(1.0, np.linalg.norm(pc))),
        "slackness_power": abs(xh[0]) * abs(P - tr_q) / P,
        "slackness_crb": abs(float(np.real(np.trace(zh @ fh)))) / (zh_norm * fh_norm),
        "stationarity": max(np.linalg.norm(lag @ q) / (P * lag_scale),
                            max(0.0, -float(np.linalg.eigvalsh(lag)[0])) / lag_scale),
        "duality_gap": abs(g_val - r) / max(1.0, r),
    }


def _polish(dual_obj: _P1Dual, xh):
    """Gauss-Newton refinement of the duals on the active equations.

    At the optimum both constraints are tight, ``Z`` has rank one and its
    range spans the null vector of ``F(Q)``.  ``Z`` is parametrised as
    ``rho w w^H`` with ``w = (cos phi, sin phi e^{j psi})``.
    """
    zh = dual_obj.zhat(xh)
    zev, zv = np.linalg.eigh(zh)
    rho = max(zev[1], 1e-12)
    w = zv[:, 1] * np.exp(-1j * np.angle(zv[0, 1]))
    phi = math.atan2(abs(w[1]), abs(w[0]))
    psi = float(np.angle(w[1]))
    sc = np.array([math.sqrt(dual_obj.cap), 1.0 / math.sqrt(dual_obj.s_a)])
    P = dual_obj.params.power

    def to_xh(y):
        lam, lrho, ph, ps = y
        ww = np.array([math.cos(ph), math.sin(ph) * np.exp(1j * ps)])
        z = math.exp(lrho) * np.outer(ww, ww.conj())
        return np.array([lam, z[0, 0].real, z[0, 1].real, z[0, 1].imag, z[1, 1].real]), ww

    def resid(y):
        x_h, ww = to_xh(y)
        out = dual_obj.primal(x_h)
        if out is None:
            return np.full(5, 1e3)
        q = out[1]
        fh = constraint_matrix(q, dual_obj.params, dual_obj.cap) * np.outer(sc, sc)
        fw = fh @ ww
        return np.array([np.real(np.trace(q)) / P - 1.0, fw[0].real, fw[0].imag,
                         fw[1].real, fw[1].imag])

    y0 = np.array([xh[0], math.log(rho), phi, psi])
    sol = least_squares(resid, y0, method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15,
                        max_nfev=400)
    return to_xh(sol.x)[0]


def _restore(q, q_anchor, params, gamma1):
    """Make ``q`` feasible at full power, then mix toward a feasible anchor if needed.

    Scaling to trace ``P`` never hurts when the trace falls short: rate grows
    and the angle CRB shrinks like ``1/c`` under ``Q -> cQ``.
    """
    P = params.power
    tr = float(np.real(np.trace(q)))
    if tr > 0 and tr != P:
        q = q * (P / tr)
    if crb_point_angle(q, params) <= gamma1:
        return q
    if crb_point_angle(q_anchor, params) > gamma1:
        return None

    def excess(t):
        return crb_point_angle((1 - t) * q + t * q_anchor, params) - gamma1

    t = brentq(excess, 0.0, 1.0, xtol=1e-15)
    # step to the feasible side of the root
    t = min(1.0, t * (1 + 1e-12) + 1e-15)
    return (1 - t) * q + t * q_anchor


def _degenerate_completion(dual_obj: _P1Dual, xh, ch, params, gamma1):
    """Complete a maximiser when ``C`` is singular at the dual optimum.

    The block on the positive eigenspace of ``C`` is fixed by the dual; the
    blocks touching the null space are chosen by a small convex program that
    maximises the margin of the CRB inequality under the power budget.
    """
    pc = params.power * dual_obj.c_of(xh)
    ev, u = np.linalg.eigh(pc)
    top = max(abs(ev[-1]), 1e-300)
    pos = ev > 1e-6 * top
    d = int((~pos).sum())
    if d == 0 or d > 2:
        return None
    u1, u0 = u[:, pos], u[:, ~pos]
    if np.linalg.norm(ch.h_comm @ u0) > 1e-6 * np.linalg.norm(ch.h_comm):
        return None
    import cvxpy as cp

    _, q11_full = _whitened_waterfill(ch.h_comm, u1, math.sqrt(params.power) / np.sqrt(ev[pos]),
                                      params.noise_comm)
    q11 = u1.conj().T @ q11_full @ u1
    q11 = 0.5 * (q11 + q11.conj().T)
    m1 = u1.shape[1]
    s = sensing_matrices(params)
    cap = dual_obj.cap
    blk = cp.Variable((m1 + d, m1 + d), hermitian=True)
    t = cp.Variable()
    ub = np.hstack([u1, u0])
    qv = ub @ blk @ ub.conj().T
    sc = np.array([math.sqrt(cap), 1.0 / math.sqrt(dual_obj.s_a)])
    f11 = cp.real(cp.trace(s.k_dd @ qv)) - 1.0 / cap
    f21 = cp.trace(s.k_da @ qv)
    f22 = cp.real(cp.trace(s.k_aa @ qv))
    fm = cp.bmat([[f11 * sc[0] ** 2, cp.conj(f21) * sc[0] * sc[1]],
                  [f21 * sc[0] * sc[1], f22 * sc[1] ** 2]])
    cons = [blk >> 0, blk[:m1, :m1] == q11, cp.real(cp.trace(blk)) <= params.power,
            0.5 * (fm + fm.H) >> t * np.eye(2)]
    prob = cp.Problem(cp.Maximize(t), cons)
    try:
        prob.solve(solver=cp.CLARABEL)
    except cp.error.SolverError:
        return None
    if blk.value is None:
        return None
    q = ub @ blk.value @ ub.conj().T
    return 0.5 * (q + q.conj().T)


def solve_p1(ch: ChannelSet, params: SystemParams, gamma1: float,
             eps: float = 1e-6, rtol: float = 1e-13, max_iter: int = 50_000) -> SolveOutcome:
    """Maximise rate subject to ``CRB(theta) <= gamma1`` and ``tr Q <= P``.

    Raises
    ------
    InfeasibleError
        If ``gamma1`` is below the smallest CRB reachable with power ``P``.
    """
    t0 = time.perf_counter()
    crb_lo = point_crb_min_value(params)
    if gamma1 < crb_lo * (1 - 1e-12):
        raise InfeasibleError(f"point bound {gamma1!r} is below the minimum CRB {crb_lo!r}")
    cap = crb_cap(params, gamma1)
    wf = rate_max_waterfill(ch, params)
    if wf.crb[Metric.POINT_ANGLE] <= gamma1:
        lam = 1.0 / (LN2 * (wf.power_alloc[0] + params.noise_comm / ch.gains[0]))
        dual = {"lambda": lam, "alpha_d": 0.0, "beta_d": 0.0, "gamma_d": 0.0, "nu_d": 0.0}
        obj = _P1Dual(ch, params, cap)
        xh = np.array([lam * params.power, 0, 0, 0, 0])
        kkt = _kkt(obj, xh, wf.q, wf.rate)
        return _finish(ch, params, gamma1, wf.q, dual, kkt, 0, t0, False, {"path": "waterfill"})

    corner = crb_min_point(ch, params, eps=eps)
    obj = _P1Dual(ch, params, cap)
    x0 = np.array([1.0, 0.0, 0.0, 0.0, 0.0])
    radius = 1e3
    res = None
    for _ in range(4):
        res = ellipsoid_minimize(obj.oracle, x0, radius, rtol=rtol, max_iter=max_iter)
        # a negative gap means the minimiser was outside the initial ball
        if not (res.hit_boundary or res.gap < -1e-9 * max(1.0, abs(res.fun))):
            break
        radius *= 10.0
    iters = res.iterations
    candidates = []
    if math.isfinite(res.fun):
        xh_star = res.x
        for xh in (_safe_polish(obj, xh_star), xh_star):
            if xh is None:
                continue
            out = obj.primal(xh)
            if out is None:
                continue
            q_raw = out[1]
            g_val = obj.value(xh, out[0])
            kkt = _kkt(obj, xh, q_raw, g_val)
            q = _restore(q_raw, corner.q, params, gamma1)
            if q is None:
                continue
            if q is not q_raw:
                kkt = _kkt(obj, xh, q, g_val)
            candidates.append((q, xh, kkt, "dual"))
        qd = _degenerate_completion(obj, xh_star, ch, params, gamma1)
        if qd is not None:
            qd = _restore(qd, corner.q, params, gamma1)
            if qd is not None:
                candidates.append((qd, xh_star, _kkt(obj, xh_star, qd, res.fun), "completion"))
    if corner.crb[Metric.POINT_ANGLE] <= gamma1:
        candidates.append((corner.q, res.x if res is not None else x0,
                           {"corner_fallback": math.inf}, "corner"))
    if not candidates:
        raise InfeasibleError("no feasible covariance recovered")

    def score(cand):
        return (rate(cand[0], ch, params), -max(cand[2].values()))

    best = max(candidates, key=score)
    # prefer a certified candidate if it is within numerical noise of the best rate
    certified = [c for c in candidates if max(c[2].values()) <= KKT_TOL]
    if certified:
        cbest = max(certified, key=score)
        if score(cbest)[0] >= score(best)[0] - 1e-9:
            best = cbest
    q, xh, kkt, path = best
    x = obj.d * xh
    dual = {"lambda": x[0], "alpha_d": x[1], "beta_d": x[2], "gamma_d": x[3], "nu_d": x[4]}
    return _finish(ch, params, gamma1, q, dual, kkt, iters, t0, True,
                   {"path": path, "ellipsoid_gap": res.gap, "oracle_calls": obj.evals})


def _safe_polish(obj, xh):
    try:
        return _polish(obj, xh)
    except (np.linalg.LinAlgError, ValueError, FloatingPointError):
        return None


def _finish(ch, params, gamma1, q, dual, kkt, iters, t0, active, info):
    crbs = {m: crb(q, params, m) for m in Metric}
    status = Status.OPTIMAL if max(kkt.values(), default=0.0) <= KKT_TOL else Status.MAX_ITERATIONS
    if status is not Status.OPTIMAL:
        log.warning("point-target solve at gamma=%g did not certify optimality: %s", gamma1, kkt)
    return SolveOutcome(q=q, rate=rate(q, ch, params), crb=crbs, duals=dual, kkt_residuals=kkt,
                        status=status, iterations=iters, wall_time=time.perf_counter() - t0,
                        metric=Metric.POINT_ANGLE, gamma=gamma1, constraint_active=active,
                        info=info)
