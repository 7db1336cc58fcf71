"""Eigen-expansion reference solution for the constant coefficient ``a = 1``.

On the unit square the Neumann Laplacian has eigenpairs

    lambda = (k**2 + l**2) pi**2,   phi = c_k c_l cos(k pi x) cos(l pi y),

with ``c_0 = 1`` and ``c_k = sqrt(2)`` otherwise, so each mode of the
subdiffusion problem obeys a scalar relaxation law.  Everything here is
evaluated in closed form through Mittag-Leffler functions; the module serves
as an oracle for the finite-element solver.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .errors import InvalidArgumentError
from .mlf import mittag_leffler

__all__ = [
    "mittag_leffler",
    "EigenPair",
    "laplace_neumann_eigenpairs",
    "eigenfunction_matrix",
    "ModalData",
    "project_modal",
    "relaxation_kernel",
    "oracle_solution",
    "oracle_field",
    "oracle_trace",
]

_SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class EigenPair:
    k: int
    l: int

    @property
    def lam(self) -> float:
        return (self.k ** 2 + self.l ** 2) * math.pi ** 2

    @property
    def norm(self) -> float:
        """Factor making the cosine product unit-normed in L2."""
        return (1.0 if self.k == 0 else _SQRT2) * (1.0 if self.l == 0 else _SQRT2)

    def __call__(self, x, y):
        return self.norm * np.cos(self.k * math.pi * np.asarray(x)) * np.cos(self.l * math.pi * np.asarray(y))


def laplace_neumann_eigenpairs(k_max: int) -> list[EigenPair]:
    """All ``(k, l)`` with ``0 <= k, l <= k_max`` sorted by eigenvalue."""
    if k_max < 0:
        raise InvalidArgumentError("k_max must be nonnegative")
    pairs = [EigenPair(k, l) for k in range(k_max + 1) for l in range(k_max + 1)]
    return sorted(pairs, key=lambda p: (p.k ** 2 + p.l ** 2, p.k, p.l))


def eigenfunction_matrix(pairs, x, y) -> np.ndarray:
    """Values ``phi_m(x_p, y_p)``, shape ``(len(x), len(pairs))``."""
    x = np.asarray(x, dtype=float)[:, None]
    y = np.asarray(y, dtype=float)[:, None]
    k = np.array([p.k for p in pairs])[None, :]
    l = np.array([p.l for p in pairs])[None, :]
    c = np.array([p.norm for p in pairs])[None, :]
    return c * np.cos(k * math.pi * x) * np.cos(l * math.pi * y)


@dataclass
class ModalData:
    """Coefficients of ``u0``, ``f`` and ``eta`` in the cosine basis."""

    pairs: list
    u0: np.ndarray
    f: np.ndarray
    eta: np.ndarray
    k_max: int = 0
    tail: float = field(default=0.0)

    @property
    def lams(self) -> np.ndarray:
        return np.array([p.lam for p in self.pairs])

    def scaled(self, su0=1.0, sf=1.0, seta=1.0) -> "ModalData":
        return ModalData(self.pairs, su0 * self.u0, sf * self.f, seta * self.eta, self.k_max, self.tail)


def _gauss(q):
    x, w = np.polynomial.legendre.leggauss(q)
    return 0.5 * (x + 1.0), 0.5 * w


def project_modal(k_max: int, u0=None, f=None, eta=None, quad: int | None = None) -> ModalData:
    """Project ``u0(x, y)``, ``f(x, y)`` and boundary ``eta(x, y, nx, ny)``.

    Interior integrals use a tensor Gauss-Legendre rule; boundary inner
    products use Gauss-Legendre on each side.  Missing inputs give zeros.
    """
    pairs = laplace_neumann_eigenpairs(k_max)
    q = quad or max(64, 2 * k_max + 32)
    s, w = _gauss(q)
    k = np.array([p.k for p in pairs])
    l = np.array([p.l for p in pairs])
    c = np.array([p.norm for p in pairs])
    Cx = np.cos(math.pi * np.outer(s, np.arange(k_max + 1)))  # (q, k_max+1)

    def interior(func):
        if func is None:
            return np.zeros(len(pairs))
        X, Y = np.meshgrid(s, s, indexing="ij")
        vals = np.asarray(func(X, Y), dtype=float) * np.ones_like(X)
        G = (Cx * w[:, None]).T @ vals @ (Cx * w[:, None])  # G[k, l]
        return c * G[k, l]

    def boundary(func):
        if func is None:
            return np.zeros(len(pairs))
        zero, one = np.zeros_like(s), np.ones_like(s)
        sides = [
            (s, zero, 0.0, -1.0),
            (one, s, 1.0, 0.0),
            (s, one, 0.0, 1.0),
            (zero, s, -1.0, 0.0),
        ]
        out = np.zeros(len(pairs))
        for x, y, nx, ny in sides:
            vals = np.asarray(func(x, y, nx * one, ny * one), dtype=float) * one
            out += (eigenfunction_matrix(pairs, x, y) * (w * vals)[:, None]).sum(axis=0)
        return out

    cu, cf, ce = interior(u0), interior(f), boundary(eta)
    # tail indicator: relative size of the outermost shell max(k, l) = k_max
    shell = np.maximum(k, l) == k_max
    lam = np.array([p.lam for p in pairs])
    weight = np.where(lam > 0, 1.0 / np.maximum(lam, 1e-300), 1.0)
    tot = np.sqrt(np.sum(cu ** 2) + np.sum((cf * weight) ** 2) + np.sum((ce * weight) ** 2))
    edge = np.sqrt(np.sum(cu[shell] ** 2) + np.sum((cf * weight)[shell] ** 2) + np.sum((ce * weight)[shell] ** 2))
    tail = float(edge / tot) if tot > 0 and k_max > 0 else 0.0
    return ModalData(pairs, cu, cf, ce, k_max, tail)


def relaxation_kernel(alpha: float, lam: np.ndarray, s: np.ndarray) -> np.ndarray:
    """``P(s) = s^a E_{a,a+1}(-lam s^a)`` for ``s >= 0``, shape ``(len(s), len(lam))``.

    ``P`` solves ``d^a P + lam P = 1`` with ``P(0) = 0``; equals
    ``(1 - E_{a,1}(-lam s^a)) / lam`` without the cancellation.
    """
    s = np.asarray(s, dtype=float)
    sa = np.where(s > 0, np.maximum(s, 0.0) ** alpha, 0.0)
    z = -np.outer(sa, np.asarray(lam, dtype=float))
    return sa[:, None] * mittag_leffler(alpha, alpha + 1.0, z)


def _boundary_modes(modal: ModalData, alpha, psi, times):
    lam = modal.lams
    out = np.zeros((len(times), len(lam)))
    steps = getattr(psi, "steps", None)
    if steps is not None:
        for t_on, height in steps:
            out += height * relaxation_kernel(alpha, lam, times - t_on)
        return out * modal.eta[None, :]
    # smooth profile: integrate by parts against psi' on its ramp
    xg, wg = _gauss(48)
    for i, t in enumerate(times):
        hi = min(t, psi.t_full)
        if hi <= psi.t_on:
            continue
        s = psi.t_on + (hi - psi.t_on) * xg
        dpsi = _ramp_derivative(psi, s)
        P = relaxation_kernel(alpha, lam, t - s)
        out[i] = (hi - psi.t_on) * (wg * dpsi) @ P
    return out * modal.eta[None, :]


def _ramp_derivative(psi, s):
    L = psi.t_full - psi.t_on
    u = np.clip((s - psi.t_on) / L, 0.0, 1.0)
    return 6.0 * u * (1.0 - u) / L


def oracle_solution(modal: ModalData, alpha: float, psi, times):
    """Modal trajectories ``(u_i, u_b)``, each of shape ``(len(times), n_modes)``.

    ``psi`` is either a step profile (anything with a ``steps`` list of
    ``(t_on, height)``), a ramp with ``t_on``/``t_full``, or ``None``.
    """
    times = np.asarray(times, dtype=float)
    lam = modal.lams
    # u0 E_{a,1}(-lam t^a) + f P(t) = u0 + (f - lam u0) P(t)
    P = relaxation_kernel(alpha, lam, times)
    ui = modal.u0[None, :] + P * (modal.f - lam * modal.u0)[None, :]
    if psi is None or not np.any(modal.eta):
        ub = np.zeros_like(ui)
    else:
        ub = _boundary_modes(modal, alpha, psi, times)
    return ui, ub


def oracle_field(modal: ModalData, alpha: float, psi, times, x, y):
    """Solution ``(u_i, u_b)`` at points ``(x, y)``, shape ``(len(times), len(x))``."""
    ui, ub = oracle_solution(modal, alpha, psi, times)
    Phi = eigenfunction_matrix(modal.pairs, x, y)
    return ui @ Phi.T, ub @ Phi.T


def oracle_trace(modal: ModalData, alpha: float, psi, times, points, tail_tol: float = 1e-6):
    """Boundary data ``(h_i, h_b)`` at the given boundary ``points`` (shape ``(m, 2)``).

    Emits a ``RuntimeWarning`` carrying the tail indicator when the outermost
    retained shell still carries more than ``tail_tol`` of the data.
    """
    if modal.tail > tail_tol:
        warnings.warn(f"modal truncation tail estimate {modal.tail:.2e} exceeds {tail_tol:.1e}",
                      RuntimeWarning, stacklevel=2)
    pts = np.asarray(points, dtype=float)
    return oracle_field(modal, alpha, psi, times, pts[:, 0], pts[:, 1])


def caputo_of_power(alpha: float, p: float, t):
    """Closed-form Caputo derivative of ``t**p`` (``p > 0``)."""
    return special.gamma(p + 1.0) / special.gamma(p + 1.0 - alpha) * np.asarray(t, dtype=float) ** (p - alpha)
