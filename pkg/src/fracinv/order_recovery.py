"""Fractional order from small-time boundary data.

Near ``t = 0`` the boundary value at a fixed point behaves like
``c0 + c1 t**alpha + O(t**(2 alpha))``.  For a trial order the best
``(c0, c1)`` solve a weighted two-column least-squares problem, so the fit
reduces to a one-dimensional search over ``alpha`` (variable projection).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateDataError, InvalidArgumentError

__all__ = [
    "OrderFitProblem",
    "OrderFitResult",
    "sample_times",
    "trapezoid_weights",
    "varpro_inner",
    "fit_order",
]


def sample_times(t0: float, count: int = 30, span: float = 100.0) -> np.ndarray:
    """Log-spaced samples on ``[t0 / span, t0]``."""
    return np.geomspace(t0 / span, t0, count)


def trapezoid_weights(t: np.ndarray) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    w = np.zeros_like(t)
    dt = np.diff(t)
    w[:-1] += 0.5 * dt
    w[1:] += 0.5 * dt
    return w


@dataclass
class OrderFitProblem:
    """Samples ``(t_i, h_i)`` on ``(0, t0]`` at one boundary point.

    ``weights`` default to the trapezoid rule in ``t``, so the objective
    approximates ``||c0 + c1 t^a - h||^2_{L2(0, t0)}``.
    """

    t: np.ndarray
    h: np.ndarray
    bounds: tuple = (0.01, 0.99)
    weights: np.ndarray | None = None
    grid_points: int = 50
    xtol: float = 1e-6

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.h = np.asarray(self.h, dtype=float)
        if self.t.shape != self.h.shape or self.t.ndim != 1:
            raise InvalidArgumentError("t and h must be 1-d arrays of equal length")
        if len(self.t) < 3:
            raise InvalidArgumentError("need at least 3 samples")
        if np.any(self.t <= 0):
            raise InvalidArgumentError("sample times must be positive")
        lo, hi = self.bounds
        if not (0.0 < lo < hi < 1.0):
            raise InvalidArgumentError(f"bounds must satisfy 0 < lo < hi < 1, got {self.bounds}")
        if self.weights is None:
            self.weights = trapezoid_weights(self.t)
        self.weights = np.asarray(self.weights, dtype=float)

    @property
    def t0(self) -> float:
        return float(self.t.max())


@dataclass
class OrderFitResult:
    alpha: float
    c0: float
    c1: float
    residual: float
    evaluations: int
    t0: float
    scan: np.ndarray = field(default=None, repr=False)


def varpro_inner(t, h, alpha: float, weights=None):
    """Weighted least-squares ``(c0, c1)`` for the model ``c0 + c1 t^alpha``.

    Returns ``(c0, c1, r)`` with ``r = sum_i w_i (c0 + c1 t_i^a - h_i)^2``.
    The normal equations are formed after scaling both columns to unit
    weighted norm.
    """
    t = np.asarray(t, dtype=float)
    h = np.asarray(h, dtype=float)
    w = np.ones_like(t) if weights is None else np.asarray(weights, dtype=float)
    if np.ptp(t) == 0.0:
        raise InvalidArgumentError("sample times must not all coincide")
    sw = np.sqrt(w)
    # center the power column so the two columns are well separated
    p = t ** alpha
    A = np.column_stack([sw, sw * p])
    b = sw * h
    scale = np.linalg.norm(A, axis=0)
    As = A / scale
    G = As.T @ As
    rhs = As.T @ b
    det = G[0, 0] * G[1, 1] - G[0, 1] ** 2
    if det <= 1e-15 * G[0, 0] * G[1, 1]:
        # nearly collinear columns: fall back to an orthogonal factorization
        coef, *_ = np.linalg.lstsq(As, b, rcond=None)
    else:
        coef = np.array([G[1, 1] * rhs[0] - G[0, 1] * rhs[1], G[0, 0] * rhs[1] - G[0, 1] * rhs[0]]) / det
    c0, c1 = coef / scale
    r = float(np.sum(w * (c0 + c1 * p - h) ** 2))
    return float(c0), float(c1), r


def fit_order(problem: OrderFitProblem) -> OrderFitResult:
    """Grid scan of the reduced residual, then golden-section refinement."""
    lo, hi = problem.bounds
    t, h, w = problem.t, problem.h, problem.weights
    evals = 0

    def r(a):
        nonlocal evals
        evals += 1
        return varpro_inner(t, h, a, w)[2]

    grid = np.linspace(lo, hi, problem.grid_points)
    vals = np.array([r(a) for a in grid])
    scale = max(float(np.sum(w * (h - np.average(h, weights=w)) ** 2)), 1e-300)
    flat_data = np.ptp(h) <= 1e-13 * max(float(np.max(np.abs(h))), 1e-300)
    if flat_data or np.ptp(vals) <= 1e-14 * scale:
        raise DegenerateDataError("order objective is flat over the search interval")
    i = int(np.argmin(vals))
    a, b = grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]
    g = (math.sqrt(5.0) - 1.0) / 2.0
    x1 = b - g * (b - a)
    x2 = a + g * (b - a)
    f1, f2 = r(x1), r(x2)
    while b - a > problem.xtol:
        if f1 <= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - g * (b - a)
            f1 = r(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + g * (b - a)
            f2 = r(x2)
    cands = [(f1, x1), (f2, x2), (vals[i], grid[i])]
    _, best = min(cands)
    c0, c1, res = varpro_inner(t, h, best, w)
    return OrderFitResult(float(best), c0, c1, res, evals, problem.t0, np.column_stack([grid, vals]))
