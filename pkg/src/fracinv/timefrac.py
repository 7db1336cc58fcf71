"""Backward-Euler convolution quadrature for the Caputo derivative.

The forward solver advances

    (w0 M + K) U^n = M (f + w0 U^0 - sum_{j=1}^n w_j (U^{n-j} - U^0)) + F^n,

with ``F^n`` the Neumann load at ``t_n``.  Writing ``W^n = U^n - U^0`` this is
``A W^n = M f - K U^0 + F^n - M sum_{j>=1} w_j W^{n-j}`` with ``A = w0 M + K``,
a lower-triangular block Toeplitz system in time.  The adjoint solver applies
its exact transpose, which runs backwards from ``t_N``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla

from .errors import InvalidArgumentError, SingularSystemError
from .meshfem import (
    Mesh,
    assemble_mass,
    assemble_neumann_load,
    assemble_stiffness,
    boundary_weights,
)
from .mlf import mittag_leffler

__all__ = [
    "TimeGrid",
    "graded_times",
    "CQWeights",
    "cq_weights",
    "caputo_apply",
    "backward_apply",
    "StepProfile",
    "RampProfile",
    "Excitation",
    "BoundaryTrace",
    "SpaceTimeSolution",
    "FractionalSolver",
    "solve_forward",
    "solve_adjoint",
    "duality_gap",
    "solve_semidiscrete",
    "trapezoid_time_weights",
]


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t_n = n T / N``, ``n = 0..N``."""

    T: float
    N: int

    def __post_init__(self):
        if int(self.N) != self.N or self.N <= 0:
            raise InvalidArgumentError(f"N must be a positive integer, got {self.N!r}")
        if not self.T > 0:
            raise InvalidArgumentError(f"T must be positive, got {self.T!r}")

    @property
    def tau(self) -> float:
        return self.T / self.N

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.N + 1) * self.tau


def graded_times(t_end: float, count: int, t_min: float = 1e-12) -> np.ndarray:
    """Geometrically graded nodes in ``[t_min, t_end]`` (strictly increasing)."""
    if count < 2 or not (0 < t_min < t_end):
        raise InvalidArgumentError("need count >= 2 and 0 < t_min < t_end")
    return np.geomspace(max(t_min, 1e-12), t_end, count)


def trapezoid_time_weights(grid: TimeGrid) -> np.ndarray:
    """Trapezoid weights on ``[0, T]`` (they include ``tau``)."""
    w = np.full(grid.N + 1, grid.tau)
    w[0] = w[-1] = 0.5 * grid.tau
    return w


@dataclass(frozen=True)
class CQWeights:
    alpha: float
    tau: float
    omega: np.ndarray = field(repr=False)

    @property
    def N(self) -> int:
        return len(self.omega) - 1


def cq_weights(alpha: float, N: int, tau: float) -> CQWeights:
    """Weights of ``((1 - zeta) / tau)**alpha``: ``w_j = tau**-alpha * b_j``."""
    if int(N) != N or N <= 0:
        raise InvalidArgumentError(f"N must be a positive integer, got {N!r}")
    if not (0.0 < alpha < 1.0):
        raise InvalidArgumentError(f"alpha must lie in (0, 1), got {alpha}")
    j = np.arange(1, int(N) + 1)
    b = np.empty(int(N) + 1)
    b[0] = 1.0
    b[1:] = np.cumprod((j - 1.0 - alpha) / j)
    return CQWeights(float(alpha), float(tau), b * tau ** (-alpha))


def caputo_apply(weights: CQWeights, history, u0=None) -> np.ndarray:
    """Discrete Caputo derivative ``sum_{j<=n} w_j (u^{n-j} - u^0)``.

    ``history`` holds ``u^0, u^1, ...`` (scalars or arrays stacked along the
    first axis); ``u0`` defaults to ``history[0]``.
    """
    u = np.asarray(history, dtype=float)
    if len(u) > len(weights.omega):
        raise InvalidArgumentError("history is longer than the weight sequence")
    base = u[0] if u0 is None else np.asarray(u0, dtype=float)
    d = u - base
    n = len(u)
    # lower-triangular Toeplitz product
    T = sla.toeplitz(weights.omega[:n], np.zeros(n))
    return np.tensordot(T, d, axes=(1, 0))


def backward_apply(weights: CQWeights, v) -> np.ndarray:
    """Transposed quadrature ``(D v)^m = sum_{n>=m} w_{n-m} v^n``."""
    v = np.asarray(v, dtype=float)
    n = len(v)
    if n > len(weights.omega):
        raise InvalidArgumentError("sequence is longer than the weight sequence")
    c = np.zeros(n)
    c[0] = weights.omega[0]
    T = sla.toeplitz(c, weights.omega[:n])
    return np.tensordot(T, v, axes=(1, 0))


def duality_gap(w, v, weights: CQWeights) -> float:
    """``tau |sum_n v^n (d w)^n - sum_n w^n (D v)^n|`` for ``w^0 = 0``.

    ``v`` may extend past ``len(w)``; a nonzero tail stands for a violated
    terminal condition and shows up as a nonzero gap.
    """
    w = np.asarray(w, dtype=float)
    v = np.asarray(v, dtype=float)
    if w[0] != 0.0:
        raise InvalidArgumentError("w must start at zero")
    n = len(w)
    lhs = np.dot(v[:n], caputo_apply(weights, w))
    rhs = np.dot(w, backward_apply(weights, v)[:n])
    return float(weights.tau * abs(lhs - rhs))


@dataclass(frozen=True)
class StepProfile:
    """``psi(t) = height`` for ``t > t_on`` and 0 otherwise."""

    t_on: float
    height: float = 1.0

    def __call__(self, t):
        return self.height * (np.asarray(t, dtype=float) > self.t_on)

    @property
    def steps(self):
        return [(self.t_on, self.height)]


@dataclass(frozen=True)
class RampProfile:
    """C^1 ramp: 0 before ``t_on``, 1 after ``t_full``, cubic in between."""

    t_on: float
    t_full: float

    def __post_init__(self):
        if not self.t_full > self.t_on:
            raise InvalidArgumentError("ramp needs t_full > t_on")

    def __call__(self, t):
        s = np.clip((np.asarray(t, dtype=float) - self.t_on) / (self.t_full - self.t_on), 0.0, 1.0)
        return s * s * (3.0 - 2.0 * s)


@dataclass
class Excitation:
    """Neumann flux ``g = sum_k psi_k(t) eta_k(y)``.

    Each ``eta_k`` is given per boundary node (length ``4n``) or per edge end
    (shape ``(4n, 2)``).
    """

    terms: list = field(default_factory=list)

    @classmethod
    def single(cls, eta, profile) -> "Excitation":
        return cls([(np.asarray(eta, dtype=float), profile)])

    @property
    def is_zero(self) -> bool:
        return len(self.terms) == 0

    def loads(self, mesh: Mesh, times: np.ndarray) -> np.ndarray:
        """Nodal load ``F^n`` at every time, shape ``(len(times), n_nodes)``."""
        out = np.zeros((len(times), mesh.n_nodes))
        for eta, psi in self.terms:
            b = assemble_neumann_load(mesh, eta)
            out += np.outer(psi(times), b)
        return out

    def check_compatibility(self, mesh: Mesh, rtol: float = 1e-8) -> float:
        """Warn when some ``eta_k`` has nonzero boundary mean; returns the worst defect."""
        worst = 0.0
        for eta, _ in self.terms:
            b = assemble_neumann_load(mesh, eta)
            scale = np.abs(b).sum()
            if scale > 0:
                worst = max(worst, abs(b.sum()) / scale)
        if worst > rtol:
            warnings.warn(f"Neumann data has nonzero mean (relative defect {worst:.2e})", stacklevel=2)
        return worst


@dataclass
class BoundaryTrace:
    """Values ``h(y_i, t_n)``; rows are times, columns boundary nodes."""

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape[0] != len(self.times):
            raise InvalidArgumentError("trace rows must match the number of times")

    def __sub__(self, other):
        return BoundaryTrace(self.times, self.values - other.values)

    def __add__(self, other):
        return BoundaryTrace(self.times, self.values + other.values)

    def norm(self, mesh: Mesh, mask=None) -> float:
        """Discrete ``L2(boundary x time)`` norm, trapezoid in both variables."""
        wb = boundary_weights(mesh)
        t = self.times
        vals = self.values
        if mask is not None:
            t = t[mask]
            vals = vals[mask]
        per_time = (vals ** 2) @ wb
        if len(t) < 2:
            return float(np.sqrt(per_time.sum()))
        return float(np.sqrt(np.trapezoid(per_time, t)))

    def spatial_norms(self, mesh: Mesh) -> np.ndarray:
        """``||h(., t_n)||_{L2(boundary)}`` for each time."""
        return np.sqrt((self.values ** 2) @ boundary_weights(mesh))

    def to_csv(self, path) -> None:
        header = "t," + ",".join(f"node_{i}" for i in range(self.values.shape[1]))
        np.savetxt(path, np.column_stack([self.times, self.values]), delimiter=",",
                   header=header, comments="", fmt="%.17g")

    @classmethod
    def from_csv(cls, path) -> "BoundaryTrace":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(data[:, 0], data[:, 1:])


@dataclass
class SpaceTimeSolution:
    mesh: Mesh
    grid: TimeGrid
    alpha: float
    values: np.ndarray = field(repr=False)  # (N+1, n_nodes)

    @property
    def trace(self) -> BoundaryTrace:
        return BoundaryTrace(self.grid.times, self.values[:, self.mesh.boundary_nodes])

    def snapshot_csv(self, path, step: int) -> None:
        xy = self.mesh.nodes
        np.savetxt(path, np.column_stack([xy, self.values[step]]), delimiter=",",
                   header="x,y,value", comments="", fmt="%.17g")


class FractionalSolver:
    """Forward and adjoint CQ solves for one coefficient, order and grid.

    The matrix ``w0 M + K`` is factorized once in the constructor.
    """

    def __init__(self, mesh: Mesh, a, alpha: float, grid: TimeGrid, M=None):
        self.mesh = mesh
        self.grid = grid
        self.alpha = float(alpha)
        self.weights = cq_weights(alpha, grid.N, grid.tau)
        self.M = assemble_mass(mesh) if M is None else M
        self.K = assemble_stiffness(mesh, a)
        A = (self.weights.omega[0] * self.M + self.K).tocsc()
        try:
            self._lu = spla.splu(A)
        except RuntimeError as exc:  # pragma: no cover - A is SPD for a > 0
            raise SingularSystemError(str(exc)) from exc

    def _march(self, rhs_fixed, loads, reverse=False):
        N = self.grid.N
        om = self.weights.omega
        W = np.zeros((N + 1, self.mesh.n_nodes))
        steps = range(N, 0, -1) if reverse else range(1, N + 1)
        for n in steps:
            if reverse:
                hist = om[1 : N - n + 1] @ W[n + 1 :]
            else:
                hist = om[n:0:-1] @ W[:n]
            rhs = -(self.M @ hist)
            if rhs_fixed is not None:
                rhs = rhs + rhs_fixed
            if loads is not None:
                rhs = rhs + loads[n]
            W[n] = self._lu.solve(rhs)
        return W

    def forward(self, u0=None, f=None, loads=None) -> np.ndarray:
        """Nodal solution at every time, shape ``(N+1, n_nodes)``.

        ``loads`` is the Neumann load ``F^n`` as an ``(N+1, n_nodes)`` array.
        """
        nn = self.mesh.n_nodes
        u0 = np.zeros(nn) if u0 is None else np.asarray(u0, dtype=float)
        fixed = np.zeros(nn)
        if f is not None:
            fixed += self.M @ np.asarray(f, dtype=float)
        if np.any(u0):
            fixed -= self.K @ u0
        if loads is not None and loads.shape != (self.grid.N + 1, nn):
            raise InvalidArgumentError("loads must have shape (N+1, n_nodes)")
        W = self._march(fixed, loads)
        return W + u0[None, :]

    def adjoint(self, cotangent: np.ndarray) -> np.ndarray:
        """Transpose of :meth:`forward` applied to nodal cotangents ``G^n``.

        Returns ``V`` with ``V^0 = 0`` and
        ``A V^m = G^m - M sum_{n>m} w_{n-m} V^n`` for ``m = N..1``.
        """
        G = np.asarray(cotangent, dtype=float)
        if G.shape != (self.grid.N + 1, self.mesh.n_nodes):
            raise InvalidArgumentError("cotangent must have shape (N+1, n_nodes)")
        return self._march(None, G, reverse=True)

    def adjoint_inputs(self, cotangent: np.ndarray, V: np.ndarray | None = None):
        """Cotangents of ``(u0, f, F)`` for output cotangent ``G``."""
        G = np.asarray(cotangent, dtype=float)
        if V is None:
            V = self.adjoint(G)
        sV = V[1:].sum(axis=0)
        u0_bar = G.sum(axis=0) - self.K @ sV
        f_bar = self.M @ sV
        return u0_bar, f_bar, V

    def boundary_cotangent(self, residual: np.ndarray, time_weights=None, space_weights=None) -> np.ndarray:
        """Nodal cotangent of ``1/2 sum_n w_n sum_i wb_i r_{n,i}**2``.

        Default weights are the trapezoid rules in time and along the boundary.
        """
        if time_weights is None:
            time_weights = trapezoid_time_weights(self.grid)
        if space_weights is None:
            space_weights = boundary_weights(self.mesh)
        r = np.asarray(residual, dtype=float)
        if r.shape != (self.grid.N + 1, len(self.mesh.boundary_nodes)):
            raise InvalidArgumentError("residual must have shape (N+1, n_boundary)")
        G = np.zeros((self.grid.N + 1, self.mesh.n_nodes))
        G[:, self.mesh.boundary_nodes] = time_weights[:, None] * r * space_weights[None, :]
        return G

    def coefficient_gradient(self, U: np.ndarray, V: np.ndarray) -> np.ndarray:
        """Element derivative ``-area_e sum_n grad U^n . grad V^n``."""
        T = self.mesh.triangles
        G = self.mesh.basis_gradients
        gu = np.einsum("ntk,tkd->ntd", U[:, T], G)
        gv = np.einsum("ntk,tkd->ntd", V[:, T], G)
        return -np.einsum("ntd,ntd->t", gu, gv) * self.mesh.areas


def solve_forward(mesh: Mesh, a, alpha: float, u0, f, exc: Excitation | None,
                  grid: TimeGrid) -> SpaceTimeSolution:
    solver = FractionalSolver(mesh, a, alpha, grid)
    loads = None if exc is None or exc.is_zero else exc.loads(mesh, grid.times)
    U = solver.forward(u0, f, loads)
    return SpaceTimeSolution(mesh, grid, float(alpha), U)


def solve_adjoint(mesh: Mesh, a, alpha: float, residual: BoundaryTrace,
                  grid: TimeGrid) -> SpaceTimeSolution:
    """Adjoint state for the misfit ``1/2 ||u - h||^2`` on the boundary."""
    if len(residual.times) != grid.N + 1 or not np.allclose(residual.times, grid.times):
        raise InvalidArgumentError("residual trace does not match the time grid")
    solver = FractionalSolver(mesh, a, alpha, grid)
    V = solver.adjoint(solver.boundary_cotangent(residual.values))
    return SpaceTimeSolution(mesh, grid, float(alpha), V)


def solve_semidiscrete(mesh: Mesh, a, alpha: float, u0, f, times, nodes=None,
                       steps: Sequence | None = None, eta=None) -> np.ndarray:
    """FEM-in-space solution evaluated exactly in time.

    Uses the generalized eigenpairs ``K v = mu M v`` so that each mode obeys
    a scalar fractional relaxation law:

        c(t) = c(0) + (f_k - mu c(0)) t^a E_{a,a+1}(-mu t^a).

    A Neumann flux ``eta`` switched on by ``steps = [(t_on, height), ...]``
    adds ``height * b_k s^a E_{a,a+1}(-mu s^a)`` with ``s = t - t_on > 0``.
    Returns values at ``nodes`` (default all), shape ``(len(times), len(nodes))``.
    Dense, so meant for moderate meshes.
    """
    times = np.asarray(times, dtype=float)
    M = assemble_mass(mesh).toarray()
    K = assemble_stiffness(mesh, a).toarray()
    mu, Vec = sla.eigh(K, M)
    mu[0] = 0.0 if abs(mu[0]) < 1e-9 * max(1.0, mu[-1]) else mu[0]
    mu = np.maximum(mu, 0.0)
    u0 = np.asarray(u0, dtype=float)
    f = np.zeros(mesh.n_nodes) if f is None else np.asarray(f, dtype=float)
    c0 = Vec.T @ (M @ u0)
    fk = Vec.T @ (M @ f)
    rows = Vec if nodes is None else Vec[np.asarray(nodes)]
    out = np.tile(rows @ c0, (len(times), 1))

    def kernel(s):
        # s^a E_{a,a+1}(-mu s^a) for every mode, shape (len(s), n_modes)
        sa = np.asarray(s, dtype=float) ** alpha
        z = -np.outer(sa, mu)
        return sa[:, None] * mittag_leffler(alpha, alpha + 1.0, z)

    out += kernel(times) @ (rows * (fk - mu * c0)[None, :]).T
    if steps:
        bk = Vec.T @ assemble_neumann_load(mesh, eta)
        for t_on, height in steps:
            s = times - t_on
            on = s > 0
            if np.any(on):
                out[on] += height * kernel(s[on]) @ (rows * bk[None, :]).T
    return out
