"""Baseline transmit designs: time switching and two power-splitting rules."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterable, List, Optional

import numpy as np

from .channel import ChannelSet, SystemParams
from .corner import CornerPoint, crb_min, rate_max_waterfill
from .metrics import Metric, crb, rate
from .outcome import NotApplicableError

__all__ = [
    "Scheme",
    "BenchmarkCurvePoint",
    "time_switching",
    "power_split_ep",
    "power_split_sem",
    "benchmark_point",
    "benchmark_boundary",
    "pareto_envelope",
    "default_knob_grid",
    "applicable_schemes",
    "benchmark_rate_at",
]


class Scheme(enum.Enum):
    OPTIMAL = "optimal"
    TIME_SWITCH = "time_switch"
    SPLIT_EP = "split_ep"
    SPLIT_SEM = "split_sem"

    @classmethod
    def parse(cls, value) -> "Scheme":
        if isinstance(value, Scheme):
            return value
        key = str(value).strip().lower().replace("-", "_")
        key = _SCHEME_SHORT.get(key, key)
        for s in cls:
            if key in (s.value, s.name.lower(), s.value.replace("_", "")):
                return s
        raise ValueError(f"unknown scheme {value!r}")


_SCHEME_SHORT = {"ts": "time_switch", "timeswitch": "time_switch", "ep": "split_ep",
                 "sem": "split_sem", "opt": "optimal"}


@dataclass(frozen=True, eq=False)
class BenchmarkCurvePoint:
    scheme: Scheme
    knob: float
    crb: float
    rate: float
    q: Optional[np.ndarray] = None


def _check_knob(x: float, name: str):
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {x!r}")


def time_switching(q_rate: CornerPoint, q_crb: CornerPoint, frac: float, metric,
                   params: SystemParams, ch: ChannelSet) -> BenchmarkCurvePoint:
    """Spend a fraction ``frac`` of the CPI on the rate-optimal covariance.

    The rate is the time average of the corner rates.  The CRB is evaluated
    at the time-averaged covariance, for both target models.
    """
    metric = Metric.parse(metric)
    _check_knob(frac, "frac")
    if metric.extended and not math.isfinite(q_rate.crb[metric]):
        raise NotApplicableError("time switching needs a full-rank rate-optimal covariance")
    # endpoints are the corner points themselves, value for value
    if frac == 1.0:
        return BenchmarkCurvePoint(Scheme.TIME_SWITCH, frac, q_rate.crb[metric], q_rate.rate,
                                   q_rate.q)
    if frac == 0.0:
        return BenchmarkCurvePoint(Scheme.TIME_SWITCH, frac, q_crb.crb[metric], q_crb.rate,
                                   q_crb.q)
    q = frac * q_rate.q + (1.0 - frac) * q_crb.q
    r = frac * q_rate.rate + (1.0 - frac) * q_crb.rate
    return BenchmarkCurvePoint(Scheme.TIME_SWITCH, frac, crb(q, params, metric), r, q)


def _split_point(ch, params, p, scheme, knob, metric):
    q = ch.eigenbasis_covariance(p)
    return BenchmarkCurvePoint(scheme, knob, crb(q, params, metric), rate(q, ch, params), q)


def power_split_ep(ch: ChannelSet, params: SystemParams, beta: float,
                   metric) -> BenchmarkCurvePoint:
    """Share ``beta`` of the power equally over the r data subchannels.

    The rest is shared equally over the ``M - r`` sensing-only subchannels;
    with ``r = M`` the split is fixed to ``beta = 1``.
    """
    metric = Metric.parse(metric)
    _check_knob(beta, "beta")
    m, r, P = params.m_tx, ch.rank_r, params.power
    if r == m:
        beta = 1.0
    p = np.empty(m)
    p[:r] = beta * P / r
    p[r:] = (1.0 - beta) * P / (m - r) if m > r else 0.0
    return _split_point(ch, params, p, Scheme.SPLIT_EP, beta, metric)


def power_split_sem(ch: ChannelSet, params: SystemParams, beta: float,
                    metric) -> BenchmarkCurvePoint:
    """Put ``beta P`` on the strongest eigenmode and share the rest equally."""
    metric = Metric.parse(metric)
    _check_knob(beta, "beta")
    m, P = params.m_tx, params.power
    p = np.full(m, (1.0 - beta) * P / (m - 1))
    p[0] = beta * P
    return _split_point(ch, params, p, Scheme.SPLIT_SEM, beta, metric)


def applicable_schemes(ch: ChannelSet, params: SystemParams, metric) -> List[Scheme]:
    """Benchmarks that can be formed for this channel and metric."""
    metric = Metric.parse(metric)
    if not metric.extended:
        return [Scheme.TIME_SWITCH]
    out = [Scheme.SPLIT_EP, Scheme.SPLIT_SEM]
    if math.isfinite(rate_max_waterfill(ch, params).crb[metric]):
        out.insert(0, Scheme.TIME_SWITCH)
    return out


def default_knob_grid(n: int = 101) -> np.ndarray:
    return np.linspace(0.0, 1.0, n)


class _Corners:
    def __init__(self, ch, params, metric, eps):
        self.rate = rate_max_waterfill(ch, params)
        self.crb = crb_min(ch, params, metric, eps=eps)


def benchmark_point(scheme, ch: ChannelSet, params: SystemParams, metric, knob: float,
                    eps: float = 1e-6, corners: Optional[_Corners] = None) -> BenchmarkCurvePoint:
    scheme = Scheme.parse(scheme)
    metric = Metric.parse(metric)
    if scheme is Scheme.TIME_SWITCH:
        corners = corners or _Corners(ch, params, metric, eps)
        return time_switching(corners.rate, corners.crb, knob, metric, params, ch)
    if scheme is Scheme.SPLIT_EP:
        return power_split_ep(ch, params, knob, metric)
    if scheme is Scheme.SPLIT_SEM:
        return power_split_sem(ch, params, knob, metric)
    raise ValueError("the optimal scheme is not a benchmark")


def pareto_envelope(points: Iterable[BenchmarkCurvePoint]) -> List[BenchmarkCurvePoint]:
    """Points not dominated in (lower CRB, higher rate), sorted by CRB.

    Along the result both CRB and rate are strictly increasing.
    """
    pts = sorted(points, key=lambda b: (b.crb, -b.rate, b.knob))
    out: List[BenchmarkCurvePoint] = []
    best = -math.inf
    for b in pts:
        if b.rate > best:
            out.append(b)
            best = b.rate
    return out


def benchmark_boundary(scheme, ch: ChannelSet, params: SystemParams, metric, knob_grid,
                       eps: float = 1e-6) -> List[BenchmarkCurvePoint]:
    """Evaluate a benchmark over ``knob_grid`` and keep its upper envelope.

    Raises
    ------
    NotApplicableError
        For time switching when the rate-optimal covariance is rank deficient
        under an extended-target metric.
    """
    grid = np.asarray(list(knob_grid), dtype=float)
    if grid.size == 0:
        raise ValueError("knob grid is empty")
    scheme = Scheme.parse(scheme)
    metric = Metric.parse(metric)
    corners = _Corners(ch, params, metric, eps) if scheme is Scheme.TIME_SWITCH else None
    pts = [benchmark_point(scheme, ch, params, metric, float(k), eps, corners) for k in grid]
    return pareto_envelope(pts)


def benchmark_rate_at(scheme, ch: ChannelSet, params: SystemParams, metric, gamma: float,
                      knob_grid=None, eps: float = 1e-6) -> float:
    """Best benchmark rate whose CRB meets ``gamma``; ``nan`` if none does.

    The grid optimum is refined by bisection toward the neighbouring knob
    value when that neighbour has a higher rate but violates the bound.
    """
    scheme = Scheme.parse(scheme)
    metric = Metric.parse(metric)
    grid = default_knob_grid() if knob_grid is None else np.asarray(list(knob_grid), float)
    corners = _Corners(ch, params, metric, eps) if scheme is Scheme.TIME_SWITCH else None

    def ev(k):
        return benchmark_point(scheme, ch, params, metric, float(k), eps, corners)

    pts = [ev(k) for k in grid]
    ok = [i for i, b in enumerate(pts) if b.crb <= gamma]
    if not ok:
        return math.nan
    i = max(ok, key=lambda j: pts[j].rate)
    best = pts[i].rate
    for j in (i - 1, i + 1):
        if 0 <= j < len(pts) and pts[j].crb > gamma and pts[j].rate > best:
            lo, hi = grid[i], grid[j]
            for _ in range(60):
                mid = 0.5 * (lo + hi)
                b = ev(mid)
                if b.crb <= gamma:
                    lo = mid
                    best = max(best, b.rate)
                else:
                    hi = mid
    return best
