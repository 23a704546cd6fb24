"""Array steering vectors, target responses and the Rician communication channel.

All arrays are half-wavelength ULAs referenced to the array centre, so the
phase exponent of element ``i`` (1-based) of an ``n``-element array is
``(2i - 1 - n)/2 * pi * sin(theta)``.

Random channels are drawn with ``numpy.random.default_rng(seed)`` (PCG64).
The scattered component is built from two consecutive ``standard_normal``
draws of shape ``(n_rx_comm, m_tx)``, the first for the real part and the
second for the imaginary part, scaled by ``1/sqrt(2)``.  This mapping is part
of the public contract: changing it invalidates stored fixtures.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

__all__ = [
    "SystemParams",
    "SteeringSet",
    "ChannelSet",
    "steering_tx",
    "steering_tx_deriv",
    "steering_rx",
    "steering_rx_deriv",
    "steering_set",
    "point_target_response",
    "extended_target_response",
    "rician_channel",
]


@dataclass(frozen=True)
class SystemParams:
    """Scalar model parameters.

    Defaults follow the point-target numerical setup of the reference
    experiments; ``cpi_len`` is not given there and 200 is our choice.
    """

    m_tx: int = 8
    n_rx_sense: int = 12
    n_rx_comm: int = 6
    cpi_len: int = 200
    power: float = 800.0
    noise_comm: float = 1.0
    noise_sense: float = 1.0
    reflect_coeff: complex = 1e-3
    target_angle: float = -0.2803 * math.pi
    rician_k: float = 100.0
    seed: int = 0

    def __post_init__(self):
        if self.m_tx <= 1:
            raise ValueError(f"m_tx must be > 1, got {self.m_tx}")
        if self.n_rx_sense < 1:
            raise ValueError(f"n_rx_sense must be >= 1, got {self.n_rx_sense}")
        if self.n_rx_comm <= 1:
            raise ValueError(f"n_rx_comm must be > 1, got {self.n_rx_comm}")
        if self.cpi_len <= self.m_tx:
            raise ValueError(
                f"cpi_len must exceed m_tx ({self.cpi_len} <= {self.m_tx})")
        for name in ("power", "noise_comm", "noise_sense"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.rician_k < 0:
            raise ValueError("rician_k must be >= 0")

    def replace(self, **changes) -> "SystemParams":
        return dataclasses.replace(self, **changes)


def _phase_coeffs(n: int) -> np.ndarray:
    i = np.arange(1, n + 1)
    return (2 * i - 1 - n) / 2.0


def steering_tx(theta: float, m: int) -> np.ndarray:
    """Transmit steering vector a(theta) of length ``m``."""
    if m < 1:
        raise ValueError("array size must be >= 1")
    return np.exp(1j * _phase_coeffs(m) * math.pi * math.sin(theta))


def steering_tx_deriv(theta: float, m: int) -> np.ndarray:
    """Derivative of :func:`steering_tx` with respect to ``theta``."""
    c = _phase_coeffs(m)
    return 1j * c * math.pi * math.cos(theta) * steering_tx(theta, m)


# receive arrays use the same geometry
steering_rx = steering_tx
steering_rx_deriv = steering_tx_deriv


@dataclass(frozen=True)
class SteeringSet:
    a: np.ndarray
    b: np.ndarray
    a_dot: np.ndarray
    b_dot: np.ndarray


def steering_set(params: SystemParams) -> SteeringSet:
    th = params.target_angle
    return SteeringSet(
        a=steering_tx(th, params.m_tx),
        b=steering_rx(th, params.n_rx_sense),
        a_dot=steering_tx_deriv(th, params.m_tx),
        b_dot=steering_rx_deriv(th, params.n_rx_sense),
    )


def point_target_response(params: SystemParams) -> np.ndarray:
    """``alpha * b(theta) a(theta)^T`` of shape (N_s, M)."""
    a = steering_tx(params.target_angle, params.m_tx)
    b = steering_rx(params.target_angle, params.n_rx_sense)
    return params.reflect_coeff * np.outer(b, a)


def extended_target_response(scatterers: Sequence[Tuple[complex, float]],
                             m: int, n_s: int) -> np.ndarray:
    """Sum of point-like scatterer responses ``alpha_k b(theta_k) a(theta_k)^T``."""
    if len(scatterers) == 0:
        raise ValueError("at least one scatterer is required")
    h = np.zeros((n_s, m), dtype=complex)
    for alpha_k, theta_k in scatterers:
        h += alpha_k * np.outer(steering_rx(theta_k, n_s), steering_tx(theta_k, m))
    return h


def _frozen(x: np.ndarray) -> np.ndarray:
    x = np.array(x, copy=True)
    x.setflags(write=False)
    return x


@dataclass(frozen=True, eq=False)
class ChannelSet:
    """Communication channel with cached SVD plus optional sensing data.

    ``svd_v`` holds the right singular vectors as columns (V, not V^H) and is
    always square M x M; ``svd_sigma`` holds the min(N_c, M) singular values in
    non-increasing order.
    """

    h_comm: np.ndarray
    svd_u: np.ndarray
    svd_sigma: np.ndarray
    svd_v: np.ndarray
    rank_r: int
    h_sense_point: Optional[np.ndarray] = None
    scatterers: Optional[Tuple[Tuple[complex, float], ...]] = None

    @classmethod
    def from_matrix(cls, h_comm, h_sense_point=None, scatterers=None) -> "ChannelSet":
        h = np.atleast_2d(np.asarray(h_comm, dtype=complex))
        u, s, vh = np.linalg.svd(h, full_matrices=True)
        tol = max(h.shape) * (s[0] if s.size else 0.0) * 1e-12
        rank = int(np.sum(s > tol))
        return cls(
            h_comm=_frozen(h),
            svd_u=_frozen(u),
            svd_sigma=_frozen(s),
            svd_v=_frozen(vh.conj().T),
            rank_r=rank,
            h_sense_point=None if h_sense_point is None else _frozen(h_sense_point),
            scatterers=None if scatterers is None else tuple(scatterers),
        )

    @property
    def m_tx(self) -> int:
        return self.h_comm.shape[1]

    @property
    def gains(self) -> np.ndarray:
        """Squared non-zero singular values zeta_k^2, k = 1..r."""
        return self.svd_sigma[: self.rank_r] ** 2

    def reconstruct(self) -> np.ndarray:
        k = self.svd_sigma.size
        return (self.svd_u[:, :k] * self.svd_sigma) @ self.svd_v[:, :k].conj().T

    def eigenbasis_covariance(self, p: np.ndarray) -> np.ndarray:
        """``V_c diag(p) V_c^H`` for a length-M allocation ``p``."""
        v = self.svd_v
        q = (v * np.asarray(p, dtype=float)) @ v.conj().T
        return 0.5 * (q + q.conj().T)


def rician_channel(params: SystemParams, theta_rx: float = math.pi / 6,
                   theta_tx: float = math.pi / 6,
                   scatterers: Optional[Sequence[Tuple[complex, float]]] = None,
                   ) -> ChannelSet:
    """Rician MIMO channel ``sqrt(K/(K+1)) H_los + sqrt(1/(K+1)) H_w``."""
    rng = np.random.default_rng(params.seed)
    shape = (params.n_rx_comm, params.m_tx)
    x = rng.standard_normal(shape)
    y = rng.standard_normal(shape)
    h_w = (x + 1j * y) / math.sqrt(2.0)
    h_los = np.outer(steering_rx(theta_rx, params.n_rx_comm),
                     steering_tx(theta_tx, params.m_tx))
    k = params.rician_k
    if math.isinf(k):
        w_los, w_sc = 1.0, 0.0
    else:
        w_los, w_sc = math.sqrt(k / (k + 1.0)), math.sqrt(1.0 / (k + 1.0))
    h = w_los * h_los + w_sc * h_w
    return ChannelSet.from_matrix(
        h, h_sense_point=point_target_response(params), scatterers=scatterers)
