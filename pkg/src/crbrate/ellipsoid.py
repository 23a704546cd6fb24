"""Deep-cut ellipsoid method for small convex dual problems."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

__all__ = ["Cut", "EllipsoidResult", "ellipsoid_minimize"]


class Cut(NamedTuple):
    """Oracle answer at a query point.

    ``feasible=True``: ``value`` is the objective and ``grad`` a subgradient.
    ``feasible=False``: ``value > 0`` is the violation of a constraint
    ``h(x) <= 0`` and ``grad`` a subgradient of ``h``.
    """

    feasible: bool
    value: float
    grad: np.ndarray


@dataclass
class EllipsoidResult:
    x: np.ndarray
    fun: float
    lower_bound: float
    iterations: int
    converged: bool
    shape: np.ndarray
    hit_boundary: bool

    @property
    def gap(self) -> float:
        return self.fun - self.lower_bound


def ellipsoid_minimize(oracle: Callable[[np.ndarray], Cut], x0, radius: float,
                       rtol: float = 1e-10, atol: float = 0.0,
                       max_iter: int = 50_000, max_depth: float = 0.5,
                       ) -> EllipsoidResult:
    """Minimise a convex function over a convex set given by a cut oracle.

    Parameters
    ----------
    oracle
        Maps a point to a :class:`Cut`.
    x0, radius
        Centre and radius of the initial ball, which must contain a minimiser.
    rtol, atol
        Stop once ``f_best - lower_bound <= atol + rtol * max(1, |f_best|)``.
    max_depth
        Cut depths are clipped to this value; shallower cuts are always valid.

    Notes
    -----
    The lower bound uses ``f(x) - sqrt(g' P g)``, the minimum of the linear
    model over the current ellipsoid ``{y : (y-x)' P^{-1} (y-x) <= 1}``.
    The ellipsoid is kept in square-root form ``P = B B'`` so that long axes
    orthogonal to every cut do not pollute the short ones through rounding.
    The bound is still a floating-point quantity; callers that need a
    certificate should verify optimality conditions directly.
    """
    x = np.array(x0, dtype=float)
    n = x.size
    if n < 2:
        raise ValueError("ellipsoid_minimize needs at least two variables")
    # square-root form: the ellipsoid is {x + B u : |u| <= 1}, shape B B'
    b_mat = np.eye(n) * radius
    c1 = n * n / (n * n - 1.0)
    f_best, x_best, lb = math.inf, x.copy(), -math.inf
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        cut = oracle(x)
        g = np.asarray(cut.grad, dtype=float)
        if cut.feasible and not np.any(g):
            # zero subgradient: x is optimal
            f_best, x_best, lb = cut.value, x.copy(), cut.value
            converged = True
            break
        bg = b_mat.T @ g
        root = float(np.linalg.norm(bg))
        if not root > 0.0:
            # the ellipsoid has collapsed along g below floating-point resolution
            if cut.feasible and cut.value < f_best:
                f_best, x_best = cut.value, x.copy()
            break
        if cut.feasible:
            lb = max(lb, cut.value - root)
            if cut.value < f_best:
                f_best, x_best = cut.value, x.copy()
            if f_best - lb <= atol + rtol * max(1.0, abs(f_best)):
                converged = True
                break
            depth = (cut.value - f_best) / root
        else:
            depth = cut.value / root
        depth = min(max(depth, 0.0), max_depth)
        u = bg / root
        gt = b_mat @ u
        x = x - (1.0 + n * depth) / (n + 1.0) * gt
        sigma = 2.0 * (1.0 + n * depth) / ((n + 1.0) * (1.0 + depth))
        tau = 1.0 - math.sqrt(max(1.0 - sigma, 0.0))
        b_mat = math.sqrt(c1 * (1.0 - depth * depth)) * (b_mat - tau * np.outer(gt, u))
    shape = b_mat @ b_mat.T
    x0 = np.asarray(x0, dtype=float)
    hit = bool(np.linalg.norm(x_best - x0) > 0.5 * radius)
    return EllipsoidResult(x=x_best, fun=f_best, lower_bound=lb, iterations=it,
                           converged=converged, shape=shape, hit_boundary=hit)
