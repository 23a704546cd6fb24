"""Achievable rate and the four CRB measures of a transmit covariance.

The Det-CRB is handled only through its natural logarithm; the linear value
underflows double precision for realistic array sizes.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .channel import ChannelSet, SystemParams, steering_set

__all__ = [
    "Metric",
    "SensingMatrices",
    "sensing_matrices",
    "mimo_rate",
    "rate",
    "point_fisher_terms",
    "crb_point_angle",
    "crb_extended",
    "crb",
    "hermitian_inverse",
]

LN2 = math.log(2.0)


class Metric(enum.IntEnum):
    """CRB measure, numbered like the four scenarios."""

    POINT_ANGLE = 1
    TRACE = 2
    MAX_EIG = 3
    LOG_DET = 4

    @property
    def extended(self) -> bool:
        return self is not Metric.POINT_ANGLE

    @property
    def label(self) -> str:
        return _LABELS[self]

    @classmethod
    def parse(cls, value) -> "Metric":
        if isinstance(value, Metric):
            return value
        if isinstance(value, int):
            return cls(value)
        key = str(value).strip().lower().replace("-", "").replace("_", "")
        if key.isdigit():
            return cls(int(key))
        try:
            return _ALIASES[key]
        except KeyError:
            raise ValueError(f"unknown CRB metric {value!r}") from None


_LABELS = {
    Metric.POINT_ANGLE: "point",
    Metric.TRACE: "trace",
    Metric.MAX_EIG: "maxeig",
    Metric.LOG_DET: "logdet",
}
_ALIASES = {
    "point": Metric.POINT_ANGLE, "pointangle": Metric.POINT_ANGLE,
    "angle": Metric.POINT_ANGLE,
    "trace": Metric.TRACE,
    "maxeig": Metric.MAX_EIG, "eig": Metric.MAX_EIG,
    "logdet": Metric.LOG_DET, "det": Metric.LOG_DET,
}


@dataclass(frozen=True)
class SensingMatrices:
    """Quadratic forms of the point-target Fisher information.

    ``k_dd = Adot^H Adot``, ``k_da = Adot^H A`` and ``k_aa = A^H A`` with
    ``A = b a^T`` and ``Adot = b adot^T + bdot a^T``.
    """

    k_dd: np.ndarray
    k_da: np.ndarray
    k_aa: np.ndarray
    norm_b2: float
    norm_bdot2: float
    norm_a2: float
    norm_adot2: float


@lru_cache(maxsize=64)
def sensing_matrices(params: SystemParams) -> SensingMatrices:
    s = steering_set(params)
    big_a = np.outer(s.b, s.a)
    big_ad = np.outer(s.b, s.a_dot) + np.outer(s.b_dot, s.a)
    mats = [big_ad.conj().T @ big_ad, big_ad.conj().T @ big_a, big_a.conj().T @ big_a]
    for m in mats:
        m.setflags(write=False)
    return SensingMatrices(
        *mats,
        norm_b2=float(np.vdot(s.b, s.b).real),
        norm_bdot2=float(np.vdot(s.b_dot, s.b_dot).real),
        norm_a2=float(np.vdot(s.a, s.a).real),
        norm_adot2=float(np.vdot(s.a_dot, s.a_dot).real),
    )


def mimo_rate(h: np.ndarray, q: np.ndarray, noise: float) -> float:
    """``log2 det(I + H Q H^H / noise)`` in bits per channel use."""
    h = np.atleast_2d(h)
    k = h @ q @ h.conj().T / noise
    k = 0.5 * (k + k.conj().T)
    ev = np.linalg.eigvalsh(k)
    return float(np.sum(np.log1p(np.maximum(ev, -0.5))) / LN2)


def rate(q: np.ndarray, ch: ChannelSet, params: SystemParams) -> float:
    return mimo_rate(ch.h_comm, q, params.noise_comm)


def point_fisher_terms(q: np.ndarray, sens: SensingMatrices):
    """Return ``(tr(Kdd Q), tr(Kda Q), tr(Kaa Q))``; the middle term is complex."""
    t_dd = float(np.real(np.sum(sens.k_dd.T * q)))
    t_da = complex(np.sum(sens.k_da.T * q))
    t_aa = float(np.real(np.sum(sens.k_aa.T * q)))
    return t_dd, t_da, t_aa


def crb_point_angle(q: np.ndarray, params: SystemParams) -> float:
    """Angle CRB of the point target; ``inf`` when the angle is not estimable."""
    sens = sensing_matrices(params)
    t_dd, t_da, t_aa = point_fisher_terms(q, sens)
    alpha2 = abs(params.reflect_coeff) ** 2
    det = t_dd * t_aa - abs(t_da) ** 2
    scale = max(t_aa, 0.0) * float(np.real(np.trace(sens.k_dd))) * max(
        float(np.real(np.trace(q))), 0.0)
    # cancellation in det leaves ~1e-13 relative noise, so the floor sits above it
    if t_aa <= 0.0 or alpha2 == 0.0 or det <= 1e-12 * scale:
        return math.inf
    return params.noise_sense * t_aa / (2.0 * alpha2 * params.cpi_len * det)


def _pd_eigvals(q: np.ndarray):
    q = 0.5 * (q + q.conj().T)
    ev = np.linalg.eigvalsh(q)
    top = max(abs(ev[-1]), abs(ev[0]))
    if top == 0.0 or ev[0] <= 1e-12 * top:
        return None
    return ev


def hermitian_inverse(q: np.ndarray) -> np.ndarray:
    """Inverse of a Hermitian positive-definite matrix via its eigendecomposition."""
    ev, u = np.linalg.eigh(0.5 * (q + q.conj().T))
    return (u / ev) @ u.conj().T


def crb_extended(q: np.ndarray, params: SystemParams, metric: Metric) -> float:
    """Trace, MaxEig or log-Det CRB of the full response-matrix estimate."""
    metric = Metric.parse(metric)
    ev = _pd_eigvals(q)
    if ev is None:
        return math.inf
    s2, L, ns, m = params.noise_sense, params.cpi_len, params.n_rx_sense, q.shape[0]
    if metric is Metric.TRACE:
        return s2 * ns / L * float(np.sum(1.0 / ev))
    if metric is Metric.MAX_EIG:
        return s2 / L / float(ev[0])
    if metric is Metric.LOG_DET:
        return m * ns * math.log(s2 / L) - ns * float(np.sum(np.log(ev)))
    raise ValueError(f"{metric!r} is not an extended-target metric")


def crb(q: np.ndarray, params: SystemParams, metric) -> float:
    metric = Metric.parse(metric)
    if metric is Metric.POINT_ANGLE:
        return crb_point_angle(q, params)
    return crb_extended(q, params, metric)
