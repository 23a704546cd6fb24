"""Corner points of the CRB-rate region.

Two extremes bound every region: the capacity-achieving water-filling
covariance (communication only) and the covariance that minimises the chosen
CRB (sensing only).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np
from scipy.optimize import minimize_scalar

from .channel import ChannelSet, SystemParams, steering_set
from .metrics import Metric, crb, rate, sensing_matrices

__all__ = [
    "CornerKind",
    "CornerPoint",
    "waterfill",
    "rate_max_waterfill",
    "point_crb_min_value",
    "extended_crb_min_value",
    "crb_min_value",
    "crb_min_point",
    "crb_min_extended",
    "crb_min",
    "crb_at_rate_max",
    "p0_threshold",
]


class CornerKind(enum.Enum):
    RATE_MAX = "rate_max"
    CRB_MIN = "crb_min"


@dataclass(frozen=True, eq=False)
class CornerPoint:
    q: np.ndarray
    rate: float
    crb: Dict[Metric, float]
    kind: CornerKind
    eta: Optional[float] = None
    power_alloc: Optional[np.ndarray] = field(default=None)


def _all_crbs(q: np.ndarray, params: SystemParams) -> Dict[Metric, float]:
    return {m: crb(q, params, m) for m in Metric}


def waterfill(gains, noise: float, power: float):
    """Water-filling over parallel channels with power gains ``gains``.

    Returns ``(p, level)`` with ``p_k = (level - noise/gains_k)^+`` and
    ``sum(p) == power``.  Zero gains receive no power.
    """
    g = np.asarray(gains, dtype=float)
    p = np.zeros_like(g)
    pos = np.flatnonzero(g > 0)
    if pos.size == 0 or power <= 0:
        return p, 0.0
    floor = noise / g[pos]
    order = np.argsort(floor, kind="stable")
    fs = floor[order]
    csum = np.cumsum(fs)
    n = fs.size
    for k in range(n, 0, -1):
        level = (power + csum[k - 1]) / k
        if level > fs[k - 1]:
            break
    alloc = np.maximum(level - fs[:k], 0.0)
    # absorb rounding so the budget is met exactly
    alloc[0] += power - alloc.sum()
    p[pos[order[:k]]] = alloc
    return p, float(level)


def rate_max_waterfill(ch: ChannelSet, params: SystemParams) -> CornerPoint:
    """Capacity-achieving covariance ``V_c diag(p) V_c^H``."""
    if ch.rank_r == 0:
        raise ValueError("communication channel is zero")
    p_r, _ = waterfill(ch.gains, params.noise_comm, params.power)
    p = np.zeros(ch.m_tx)
    p[: ch.rank_r] = p_r
    q = ch.eigenbasis_covariance(p)
    return CornerPoint(q=q, rate=rate(q, ch, params), crb=_all_crbs(q, params),
                       kind=CornerKind.RATE_MAX, power_alloc=p)


def point_crb_min_value(params: SystemParams) -> float:
    """Smallest achievable angle CRB (an infimum when N_s < M)."""
    sens = sensing_matrices(params)
    m, ns = params.m_tx, params.n_rx_sense
    best = max(ns * sens.norm_adot2, m * sens.norm_bdot2)
    if best == 0.0 or params.reflect_coeff == 0:
        return math.inf
    alpha2 = abs(params.reflect_coeff) ** 2
    return params.noise_sense / (2 * alpha2 * params.cpi_len * params.power * best)


def extended_crb_min_value(params: SystemParams, metric) -> float:
    metric = Metric.parse(metric)
    m, ns, s2 = params.m_tx, params.n_rx_sense, params.noise_sense
    L, P = params.cpi_len, params.power
    if metric is Metric.TRACE:
        return s2 * ns * m * m / (P * L)
    if metric is Metric.MAX_EIG:
        return m * s2 / (L * P)
    if metric is Metric.LOG_DET:
        return m * ns * math.log(m * s2 / (L * P))
    raise ValueError(f"{metric!r} is not an extended-target metric")


def crb_min_value(params: SystemParams, metric) -> float:
    metric = Metric.parse(metric)
    if metric is Metric.POINT_ANGLE:
        return point_crb_min_value(params)
    return extended_crb_min_value(params, metric)


def _mixed_cov(eta: float, params: SystemParams) -> np.ndarray:
    s = steering_set(params)
    P = params.power
    u = s.a.conj()
    q = (1.0 - eta) * P * np.outer(u, u.conj()) / np.vdot(s.a, s.a).real
    nd = np.vdot(s.a_dot, s.a_dot).real
    if eta > 0 and nd > 0:
        w = s.a_dot.conj()
        q = q + eta * P * np.outer(w, w.conj()) / nd
    return 0.5 * (q + q.conj().T)


def crb_min_point(ch: ChannelSet, params: SystemParams, eps: float = 1e-6,
                  grid: int = 1000) -> CornerPoint:
    """Sensing-optimal covariance for the point target.

    ``N_s > M`` gives the unique rank-one beam along ``a*``.  ``N_s = M``
    admits a family mixing ``a*`` and ``adot*``; the mixing weight is chosen
    to maximise rate.  ``N_s < M`` approaches the optimum as the weight on
    ``adot*`` tends to one, so ``1 - eps`` is used.
    """
    m, ns = params.m_tx, params.n_rx_sense
    if ns > m:
        eta = 0.0
    elif ns < m:
        eta = 1.0 - eps
    else:
        hi = 1.0 - 1e-9

        def neg_rate(e):
            return -rate(_mixed_cov(e, params), ch, params)

        res = minimize_scalar(neg_rate, bounds=(0.0, hi), method="bounded",
                              options={"xatol": 1e-10})
        cands = [(float(-res.fun), float(res.x))]
        for e in np.linspace(0.0, hi, grid):
            cands.append((-neg_rate(e), float(e)))
        eta = max(cands)[1]
    q = _mixed_cov(eta, params)
    return CornerPoint(q=q, rate=rate(q, ch, params), crb=_all_crbs(q, params),
                       kind=CornerKind.CRB_MIN, eta=eta)


def crb_min_extended(ch: ChannelSet, params: SystemParams,
                     metric=Metric.TRACE) -> CornerPoint:
    """Equal-power covariance ``(P/M) I``, optimal for all three extended metrics."""
    Metric.parse(metric)
    m = params.m_tx
    q = np.eye(m, dtype=complex) * (params.power / m)
    crbs = _all_crbs(q, params)
    for met in (Metric.TRACE, Metric.MAX_EIG, Metric.LOG_DET):
        crbs[met] = extended_crb_min_value(params, met)
    return CornerPoint(q=q, rate=rate(q, ch, params), crb=crbs,
                       kind=CornerKind.CRB_MIN, power_alloc=np.full(m, params.power / m))


def crb_min(ch: ChannelSet, params: SystemParams, metric, eps: float = 1e-6) -> CornerPoint:
    metric = Metric.parse(metric)
    if metric is Metric.POINT_ANGLE:
        return crb_min_point(ch, params, eps=eps)
    return crb_min_extended(ch, params, metric)


def crb_at_rate_max(ch: ChannelSet, params: SystemParams, metric) -> float:
    """CRB of the water-filling covariance; ``inf`` when it is rank deficient."""
    return rate_max_waterfill(ch, params).crb[Metric.parse(metric)]


def p0_threshold(ch: ChannelSet, params: SystemParams) -> float:
    """Power above which water-filling activates all M modes (``inf`` if r < M)."""
    m = ch.m_tx
    if ch.rank_r < m:
        return math.inf
    floors = params.noise_comm / ch.gains
    return float(np.sum(floors[-1] - floors[:-1]))
