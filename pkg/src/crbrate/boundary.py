"""Pareto boundary sweeps of the CRB-rate region and rate-versus-SNR curves."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .channel import ChannelSet, SystemParams
from .corner import crb_at_rate_max, crb_min, crb_min_value, rate_max_waterfill
from .metrics import Metric, crb, rate
from .outcome import InfeasibleError, SolveOutcome, Status
from .solver_extended import solve_extended
from .solver_point import solve_p1

__all__ = [
    "SweepSpec",
    "ParetoPoint",
    "SnrPoint",
    "solve",
    "feasibility_range",
    "sweep_grid",
    "pareto_sweep",
    "rate_vs_snr",
    "feasibility_onset_snr",
    "CAP_FACTOR",
    "LOGDET_EIG_FACTOR",
]

log = logging.getLogger(__name__)

# upper end of a sweep when the rate-optimal CRB is unbounded
CAP_FACTOR = 1e3
# per-eigenvalue factor for the log-det cap; 1e3 per eigenvalue starves the
# sensing-only modes below the singularity floor of the CRB matrix
LOGDET_EIG_FACTOR = 10.0


def solve(ch: ChannelSet, params: SystemParams, metric, gamma: float, eps: float = 1e-6
          ) -> SolveOutcome:
    """Dispatch to the optimal solver of the scenario (LogDet takes ``ln Gamma``)."""
    metric = Metric.parse(metric)
    if metric is Metric.POINT_ANGLE:
        return solve_p1(ch, params, gamma, eps=eps)
    return solve_extended(ch, params, metric, gamma)


def feasibility_range(scenario, ch: ChannelSet, params: SystemParams) -> Tuple[float, float]:
    """``(smallest CRB, CRB at the rate-optimal covariance)``; the second may be inf."""
    metric = Metric.parse(scenario)
    return crb_min_value(params, metric), crb_at_rate_max(ch, params, metric)


@dataclass
class SweepSpec:
    """Grid of CRB bounds.  LogDet bounds are natural logs and spaced linearly."""

    scenario: Metric
    n_points: int = 50
    spacing: str = "log"
    gamma_lo: Optional[float] = None
    gamma_hi: Optional[float] = None

    def __post_init__(self):
        self.scenario = Metric.parse(self.scenario)
        if self.n_points < 2:
            raise ValueError("a sweep needs at least two points")
        if self.spacing not in ("log", "linear"):
            raise ValueError(f"spacing must be 'log' or 'linear', got {self.spacing!r}")


@dataclass(frozen=True, eq=False)
class ParetoPoint:
    gamma: float
    rate: float
    crb_achieved: float
    constraint_active: bool
    scenario: Metric
    scheme: str = "optimal"
    status: Status = Status.OPTIMAL
    q: Optional[np.ndarray] = field(default=None, repr=False)
    kkt_max: float = 0.0


def _default_bounds(spec: SweepSpec, ch, params):
    lo_c, hi_c = feasibility_range(spec.scenario, ch, params)
    m, ns = params.m_tx, params.n_rx_sense
    capped = False
    if spec.scenario is Metric.LOG_DET:
        lo = lo_c + 1e-6
        if math.isfinite(hi_c):
            hi = hi_c
        else:
            # scale every eigenvalue of the CRB matrix by LOGDET_EIG_FACTOR
            hi, capped = lo_c + m * ns * math.log(LOGDET_EIG_FACTOR), True
    else:
        lo = lo_c * (1 + 1e-6)
        if math.isfinite(hi_c):
            hi = hi_c
        else:
            hi, capped = lo_c * CAP_FACTOR, True
    if spec.gamma_lo is not None:
        lo = spec.gamma_lo
    if spec.gamma_hi is not None:
        hi, capped = spec.gamma_hi, False
    if lo < lo_c:
        raise ValueError(f"gamma_lo={lo!r} is below the minimum CRB {lo_c!r}")
    return lo, hi, capped


def sweep_grid(spec: SweepSpec, ch: ChannelSet, params: SystemParams):
    """Return ``(grid, capped)`` for a sweep specification."""
    lo, hi, capped = _default_bounds(spec, ch, params)
    n = spec.n_points
    if spec.spacing == "linear" or spec.scenario is Metric.LOG_DET:
        grid = np.linspace(lo, hi, n)
    else:
        grid = np.geomspace(lo, hi, n)
    grid[0], grid[-1] = lo, hi
    return grid, capped


def pareto_sweep(spec: SweepSpec, ch: ChannelSet, params: SystemParams, eps: float = 1e-6
                 ) -> List[ParetoPoint]:
    """Solve the scenario at every bound of the sweep grid.

    Bounds at or above the rate-optimal CRB return the water-filling point.
    If numerical noise makes a rate dip below the previous grid point, the
    previous covariance (which is feasible for the larger bound) is reused,
    so rates are non-decreasing along the output.
    """
    metric = spec.scenario
    grid, _ = sweep_grid(spec, ch, params)
    wf = rate_max_waterfill(ch, params)
    crb_wf = wf.crb[metric]
    out: List[ParetoPoint] = []
    prev: Optional[ParetoPoint] = None
    for g in grid:
        g = float(g)
        if g >= crb_wf:
            pt = ParetoPoint(g, wf.rate, crb_wf, False, metric, q=wf.q)
        else:
            try:
                res = solve(ch, params, metric, g, eps=eps)
            except InfeasibleError as exc:
                log.info("dropping infeasible bound %r: %s", g, exc)
                continue
            pt = ParetoPoint(g, res.rate, res.crb[metric], res.constraint_active, metric,
                             status=res.status, q=res.q, kkt_max=res.max_kkt_residual)
        if prev is not None and pt.rate < prev.rate:
            log.info("rate dip of %.3g bits at bound %r repaired", prev.rate - pt.rate, g)
            pt = ParetoPoint(g, prev.rate, prev.crb_achieved, prev.constraint_active, metric,
                             status=pt.status, q=prev.q, kkt_max=pt.kkt_max)
        out.append(pt)
        prev = pt
    return out


@dataclass(frozen=True)
class SnrPoint:
    snr_db: float
    rate: float
    feasible: bool
    status: str
    rate_lower: float
    rate_upper: float


def feasibility_onset_snr(scenario, params: SystemParams, gamma: float) -> float:
    """Smallest SNR (dB) at which the bound ``gamma`` becomes reachable."""
    metric = Metric.parse(scenario)
    ref = crb_min_value(params, metric)
    if metric is Metric.LOG_DET:
        # ln CRB_min shifts by -M N_s ln(P'/P) when the power scales
        p_min = params.power * math.exp((ref - gamma) / (params.m_tx * params.n_rx_sense))
    else:
        p_min = params.power * ref / gamma
    return 10.0 * math.log10(p_min / params.noise_comm)


def rate_vs_snr(scenario, ch_template: ChannelSet, params: SystemParams, gamma_fixed: float,
                snr_grid: Sequence[float], eps: float = 1e-6) -> List[SnrPoint]:
    """Optimal rate at a fixed CRB bound as the power ``P = sigma_c^2 10^(snr/10)`` varies.

    Each entry also carries the rates of the CRB-minimising and rate-maximising
    designs at the same power as reference curves.
    """
    metric = Metric.parse(scenario)
    out = []
    for snr in snr_grid:
        p = params.replace(power=params.noise_comm * 10.0 ** (float(snr) / 10.0))
        lower = crb_min(ch_template, p, metric, eps=eps).rate
        upper = rate_max_waterfill(ch_template, p).rate
        try:
            res = solve(ch_template, p, metric, gamma_fixed, eps=eps)
        except InfeasibleError:
            out.append(SnrPoint(float(snr), math.nan, False, "infeasible", lower, upper))
            continue
        out.append(SnrPoint(float(snr), res.rate, True, res.status.value, lower, upper))
    return out
