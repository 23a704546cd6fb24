"""Solver result container, status codes and error types."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from .metrics import Metric

__all__ = [
    "Status",
    "SolveOutcome",
    "InfeasibleError",
    "NotApplicableError",
    "serialize_matrix",
    "deserialize_matrix",
]


class Status(enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    MAX_ITERATIONS = "max_iterations"


class InfeasibleError(ValueError):
    """The CRB bound lies below the smallest CRB reachable with the power budget."""


class NotApplicableError(ValueError):
    """A benchmark scheme cannot be formed for the given channel."""


def serialize_matrix(q: np.ndarray) -> list:
    """Row-major list with real and imaginary parts interleaved."""
    q = np.asarray(q, dtype=complex)
    out = np.empty(q.size * 2)
    out[0::2] = q.real.ravel()
    out[1::2] = q.imag.ravel()
    return out.tolist()


def deserialize_matrix(values, m: int) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    return (v[0::2] + 1j * v[1::2]).reshape(m, m)


@dataclass
class SolveOutcome:
    q: Optional[np.ndarray]
    rate: float
    crb: Dict[Metric, float]
    duals: Dict[str, float]
    kkt_residuals: Dict[str, float]
    status: Status
    iterations: int = 0
    wall_time: float = 0.0
    metric: Optional[Metric] = None
    gamma: float = math.nan
    constraint_active: bool = False
    power_alloc: Optional[np.ndarray] = None
    info: Dict[str, object] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status is Status.OPTIMAL

    @property
    def max_kkt_residual(self) -> float:
        return max(self.kkt_residuals.values(), default=0.0)

    @property
    def achieved_crb(self) -> float:
        return self.crb.get(self.metric, math.nan) if self.metric else math.nan

    def to_dict(self) -> dict:
        return {
            "q": None if self.q is None else serialize_matrix(self.q),
            "m": None if self.q is None else int(self.q.shape[0]),
            "rate": self.rate,
            "crb": {m.label: v for m, v in self.crb.items()},
            "duals": dict(self.duals),
            "kkt_residuals": dict(self.kkt_residuals),
            "status": self.status.value,
            "iterations": self.iterations,
            "wall_time": self.wall_time,
            "metric": None if self.metric is None else self.metric.label,
            "gamma": self.gamma,
            "constraint_active": self.constraint_active,
            "power_alloc": None if self.power_alloc is None else list(map(float, self.power_alloc)),
        }
