"""Rational continuation of pre-excitation boundary data.

Before the flux is switched on the boundary values are driven only by the
unknown initial state and source.  A low-degree AAA rational fit to
``h(y, t)`` on ``t <= T0`` is extended past ``T0`` and subtracted, leaving
reduced data that respond to the excitation alone.
"""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.interpolate import AAA

from .errors import DegenerateFitError, InvalidArgumentError, PoleEvaluationError
from .timefrac import BoundaryTrace

__all__ = [
    "RationalApproximant",
    "aaa_fit",
    "evaluate_rational",
    "ReducedTrace",
    "reduce_data",
]


@dataclass(frozen=True)
class RationalApproximant:
    """Barycentric rational ``sum w_j f_j / (t - z_j) / sum w_j / (t - z_j)``."""

    support: np.ndarray
    values: np.ndarray
    weights: np.ndarray
    errors: tuple = field(default=(), compare=False)

    @property
    def degree(self) -> int:
        return len(self.support) - 1

    def __call__(self, t):
        return evaluate_rational(self, t)

    def poles(self) -> np.ndarray:
        """Finite poles from the arrowhead generalized eigenproblem."""
        m = len(self.support)
        if m < 2:
            return np.array([])
        B = np.eye(m + 1)
        B[0, 0] = 0.0
        E = np.zeros((m + 1, m + 1))
        E[0, 1:] = self.weights
        E[1:, 0] = 1.0
        E[1:, 1:] = np.diag(self.support)
        ev = sla.eigvals(E, B)
        return ev[np.isfinite(ev)]

    def residues(self, poles=None) -> np.ndarray:
        """Residues at ``poles`` via ``N(p) / D'(p)``."""
        p = self.poles() if poles is None else np.asarray(poles)
        d = p[:, None] - self.support[None, :]
        num = (self.weights * self.values / d).sum(axis=1)
        dden = -(self.weights / d ** 2).sum(axis=1)
        return num / dden


def evaluate_rational(R: RationalApproximant, t):
    """Barycentric evaluation; support points return their values exactly."""
    t = np.asarray(t, dtype=float)
    flat = np.atleast_1d(t).ravel()
    if len(R.support) == 0:
        out = np.zeros_like(flat)
        return out.reshape(t.shape) if t.ndim else float(out[0])
    d = flat[:, None] - R.support[None, :]
    hit = d == 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        C = 1.0 / d
        terms = C * R.weights[None, :]
        den = terms.sum(axis=1)
        num = (terms * R.values[None, :]).sum(axis=1)
        out = num / den
    on = hit.any(axis=1)
    if np.any(on):
        out[on] = R.values[np.argmax(hit[on], axis=1)]
    size = np.abs(terms).sum(axis=1)
    bad = ~on & (np.abs(den) <= np.maximum(1e-300, 4.0 * np.finfo(float).eps * size))
    if np.any(bad):
        raise PoleEvaluationError(f"rational function evaluated at a pole near t = {flat[bad][0]:.6g}")
    return out.reshape(t.shape) if t.ndim else float(out[0])


def aaa_fit(t, f, degree: int = 4, tol: float = 1e-13, cleanup: bool = True,
            cleanup_tol: float = 1e-13) -> RationalApproximant:
    """AAA fit of type ``(degree, degree)`` at most (``scipy.interpolate.AAA``).

    Support points are added greedily until ``degree + 1`` points are used
    or the residual drops to ``tol * max|f|``.  With ``cleanup`` set,
    Froissart doublets (poles with negligible residues) are removed.
    """
    Z = np.asarray(t, dtype=float).ravel()
    F = np.asarray(f, dtype=float).ravel()
    if Z.shape != F.shape:
        raise InvalidArgumentError("t and f must have the same length")
    if degree < 0:
        raise InvalidArgumentError("degree must be nonnegative")
    Z, idx = np.unique(Z, return_index=True)
    F = F[idx]
    if len(Z) < 2 * degree + 2:
        raise InvalidArgumentError(f"need at least {2 * degree + 2} distinct samples, got {len(Z)}")
    if not np.all(np.isfinite(F)):
        raise InvalidArgumentError("samples must be finite")
    with warnings.catch_warnings():
        # hitting the degree cap is the normal stop here
        warnings.filterwarnings("ignore", "AAA failed to converge", RuntimeWarning)
        try:
            r = AAA(Z, F, rtol=tol, max_terms=degree + 1, clean_up=cleanup, clean_up_tol=cleanup_tol)
        except (ValueError, np.linalg.LinAlgError) as exc:
            raise DegenerateFitError(f"AAA fit failed: {exc}", {"degree": degree}) from exc
    w = np.asarray(r.weights)
    if not np.all(np.isfinite(w)) or np.linalg.norm(w) == 0:
        raise DegenerateFitError("AAA weights degenerate", {"weights": w.tolist()})
    return RationalApproximant(np.real(r.support_points), np.real(r.support_values), np.real(w),
                               tuple(float(e) for e in np.atleast_1d(r.errors)))


@dataclass
class ReducedTrace:
    """Reduced data plus per-node continuation diagnostics."""

    trace: BoundaryTrace
    fit_residual: np.ndarray
    extension: np.ndarray
    flagged: np.ndarray
    fits: list = field(default_factory=list, repr=False)

    def to_csv(self, path, extension_error=None) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["node", "fit_residual", "extension_max", "flagged", "poles", "extension_error"])
            for i, R in enumerate(self.fits):
                poles = "" if R is None else ";".join(f"{p.real:.6g}{p.imag:+.6g}j" for p in R.poles())
                ee = "" if extension_error is None else f"{extension_error[i]:.6e}"
                wr.writerow([i, f"{self.fit_residual[i]:.6e}", f"{self.extension[i]:.6e}",
                             int(self.flagged[i]), poles, ee])


def reduce_data(h: BoundaryTrace, T0: float, degree: int = 4, tol: float = 1e-13,
                t_min: float = 1e-3, alpha: float | None = None) -> ReducedTrace:
    """Subtract a nodewise rational continuation of ``h`` fitted on ``[t_min, T0]``.

    The result vanishes for ``t <= T0``.  Nodes whose fit fails fall back
    to a constant extension of the last sample before ``T0`` and are flagged;
    this includes nodes with non-finite samples in the window.

    With ``alpha`` given the rational function is fitted in ``s = t**alpha``
    rather than ``t``.  Before the excitation every mode is a function of
    ``t**alpha`` (the constant mode grows linearly in it), so the fit is far
    more accurate in that variable.
    """
    t = h.times
    x = t if alpha is None else t ** alpha
    if not (t[0] < T0 < t[-1]):
        raise InvalidArgumentError("T0 must lie strictly inside the time range")
    win = (t >= t_min) & (t <= T0)
    after = t > T0
    out = np.zeros_like(h.values)
    m = h.values.shape[1]
    resid = np.zeros(m)
    ext = np.zeros(m)
    flagged = np.zeros(m, dtype=bool)
    fits = []
    last = np.flatnonzero(t <= T0)[-1]
    for i in range(m):
        y = h.values[:, i]
        try:
            R = aaa_fit(x[win], y[win], degree=degree, tol=tol)
            hr = evaluate_rational(R, x[after])
            resid[i] = float(np.max(np.abs(evaluate_rational(R, x[win]) - y[win])))
        except (DegenerateFitError, PoleEvaluationError, InvalidArgumentError) as exc:
            warnings.warn(f"continuation failed at node {i}: {exc}; using constant extension")
            R = None
            hr = np.full(after.sum(), y[last])
            flagged[i] = True
        fits.append(R)
        out[after, i] = y[after] - hr
        ext[i] = float(np.max(np.abs(hr))) if hr.size else 0.0
    return ReducedTrace(BoundaryTrace(t, out), resid, ext, flagged, fits)
