"""Two-parameter Mittag-Leffler function on the negative real axis.

``mittag_leffler(alpha, beta, x)`` evaluates

    E_{alpha,beta}(x) = sum_k x**k / Gamma(alpha*k + beta),   x <= 0,

for ``0 < alpha < 2`` by one of three routes, chosen per point from
``y = -x``:

* the power series while ``y**(1/alpha)`` is small (the largest term then
  exceeds the result by a bounded factor);
* the large-argument expansion
  ``-sum_{k=1}^{K} x**(-k) / Gamma(beta - alpha*k)``, plus the exponential
  pole contributions when ``alpha >= 1``, for ``y >= X_ASYM``;
* in between, the branch-cut integral obtained by collapsing the Hankel
  contour of the inverse Laplace transform.  For ``alpha < 1`` it is
  sampled once per ``(alpha, beta)`` on Chebyshev nodes in ``log y`` and
  interpolated, which keeps array evaluation cheap.
"""
from __future__ import annotations

import math
from functools import lru_cache

import numpy as np
from numpy.polynomial import chebyshev as C
from scipy import integrate, special

from .errors import InvalidArgumentError

__all__ = ["mittag_leffler", "X_SWITCH", "X_ASYM", "series_limit"]

X_SWITCH = 5.0
X_ASYM = 50.0
_ASYM_TERMS = 80
_CHEB_DEGREE = 72


def series_limit(alpha: float) -> float:
    """Largest ``y`` for which the power series is used."""
    return min(X_SWITCH, 3.0 ** alpha)


def _check_alpha(alpha):
    if not (0.0 < alpha < 2.0):
        raise InvalidArgumentError(f"alpha must lie in (0, 2), got {alpha}")


def _series(alpha, beta, y):
    """Power series in ``z = -y``; vectorized over ``y``."""
    y = np.asarray(y, dtype=float)
    out = np.zeros_like(y)
    ymax = float(y.max(initial=0.0))
    # terms decay once alpha*k exceeds ~ y**(1/alpha); add generous slack
    kmax = int(40 + 3.0 * max(ymax, 1.0) ** (1.0 / alpha) / min(alpha, 1.0) + 40.0 / alpha)
    k = np.arange(kmax + 1)[:, None]
    arg = alpha * k + beta
    rg = special.rgamma(arg)
    with np.errstate(divide="ignore"):
        logy = np.where(y > 0, np.log(np.where(y > 0, y, 1.0)), -np.inf)
    with np.errstate(invalid="ignore"):
        mag = np.exp(k * logy[None, :] - special.gammaln(arg) * (rg != 0))
    mag = np.where(rg == 0, 0.0, mag)
    mag[0] = rg[0]  # y**0 = 1 even for y = 0
    terms = np.where(k % 2 == 0, 1.0, -1.0) * np.sign(rg) * np.abs(mag)
    out = terms.sum(axis=0)
    return out


def _pole_terms(alpha, beta, y):
    """Residue contributions ``(1/alpha) sum_j s_j**(1-beta) exp(s_j)``, alpha >= 1."""
    y = np.asarray(y, dtype=float)
    r = y ** (1.0 / alpha)
    if alpha == 1.0:
        s = -r
        return np.real(np.exp(s) * np.power(s.astype(complex), 1.0 - beta))
    s = r * np.exp(1j * math.pi / alpha)
    return (2.0 / alpha) * np.real(np.exp(s) * s ** (1.0 - beta))


def _asymptotic(alpha, beta, y, terms=_ASYM_TERMS):
    """Large-argument expansion with optimal truncation.

    Returns ``(value, ok)`` where ``ok`` flags points whose smallest omitted
    term is below 1e-16 of the value.
    """
    y = np.asarray(y, dtype=float)
    k = np.arange(1, terms + 1)[:, None]
    arg = beta - alpha * k
    rg = special.rgamma(arg)
    with np.errstate(over="ignore", divide="ignore"):
        logmag = -special.gammaln(arg) - k * np.log(y)[None, :]
        mag = np.where(rg == 0, 0.0, np.exp(logmag))
    # -sum_k (-y)^(-k) rg_k  = sum_k (-1)^(k+1) y^(-k) rg_k
    signed = np.where(k % 2 == 1, 1.0, -1.0) * np.sign(rg) * mag
    # optimal truncation at the smallest term of the envelope; for negative
    # arguments |1/Gamma(x)| <= Gamma(1-x)/pi, which ignores accidental zeros
    with np.errstate(over="ignore"):
        env_log = np.where(arg <= 0, special.gammaln(1.0 - arg) - math.log(math.pi), -special.gammaln(arg))
        env = np.exp(env_log - k * np.log(y)[None, :])
    cut = np.argmin(env, axis=0)
    keep = np.arange(terms)[:, None] < cut[None, :]
    value = np.where(keep, signed, 0.0).sum(axis=0)
    tail = env[cut, np.arange(y.size)]
    if alpha >= 1.0:
        value = value + _pole_terms(alpha, beta, y)
    ok = tail <= 1e-16 * np.maximum(np.abs(value), 1e-300)
    return value, ok


def _branch_cut_integral(alpha, beta, y):
    """Scalar evaluation through the collapsed Hankel contour (alpha != 1)."""
    if beta >= 1.0 + alpha - 1e-14:
        # E_{a,b}(z) = (E_{a,b-a}(z) - 1/Gamma(b-a)) / z
        lower = _branch_cut_integral(alpha, beta - alpha, y)
        return (lower - special.rgamma(beta - alpha)) / (-y)
    sb = math.sin(math.pi * beta)
    sab = math.sin(math.pi * (alpha - beta))
    ca = math.cos(math.pi * alpha)
    p = (1.0 - beta) / alpha
    inv = 1.0 / alpha

    def g(u):
        return math.exp(-(u ** inv)) * (u * sb - y * sab) / (u * u + 2.0 * y * u * ca + y * y)

    upper = 745.0 ** alpha
    split = min(max(y, 1.0), upper)
    opts = dict(epsabs=0.0, epsrel=2e-14, limit=400)
    if p != 0.0:
        # algebraic endpoint weight u**p handled by QAWS
        lo, _ = integrate.quad(g, 0.0, split, weight="alg", wvar=(p, 0.0), **opts)
        hi, _ = integrate.quad(lambda u: g(u) * u ** p, split, upper, **opts)
    else:
        pts = [y] if y < split else None
        lo, _ = integrate.quad(g, 0.0, split, points=pts, **opts)
        hi, _ = integrate.quad(g, split, upper, **opts)
    value = (lo + hi) / (alpha * math.pi)
    if alpha > 1.0:
        value += float(_pole_terms(alpha, beta, np.array([y]))[0])
    return value


@lru_cache(maxsize=64)
def _mid_interpolant(alpha, beta):
    lo = math.log(series_limit(alpha)) - 0.05
    hi = math.log(X_ASYM) + 0.05
    nodes = np.cos(np.pi * (np.arange(_CHEB_DEGREE + 1) + 0.5) / (_CHEB_DEGREE + 1))
    s = 0.5 * (hi - lo) * nodes + 0.5 * (hi + lo)
    vals = np.array([_branch_cut_integral(alpha, beta, math.exp(si)) for si in s])
    use_log = bool(np.all(vals > 0))
    data = np.log(vals) if use_log else vals
    coef = C.chebfit(nodes, data, _CHEB_DEGREE)
    return lo, hi, coef, use_log


def _mid(alpha, beta, y):
    y = np.asarray(y, dtype=float)
    if alpha < 1.0:
        lo, hi, coef, use_log = _mid_interpolant(alpha, beta)
        s = (2.0 * np.log(y) - (hi + lo)) / (hi - lo)
        val = C.chebval(s, coef)
        return np.exp(val) if use_log else val
    return np.array([_branch_cut_integral(alpha, beta, float(v)) for v in y])


def _alpha_one(beta, y):
    if beta == 1.0:
        return np.exp(-y)
    out = np.empty_like(y)
    small = y <= 700.0
    # Kummer: 1F1(1; b; -y) = exp(-y) 1F1(b-1; b; y)
    out[small] = np.exp(-y[small]) * special.hyp1f1(beta - 1.0, beta, y[small]) * special.rgamma(beta)
    if np.any(~small):
        out[~small], _ = _asymptotic(1.0, beta, y[~small])
    return out


def mittag_leffler(alpha: float, beta: float, x):
    """Evaluate ``E_{alpha,beta}(x)`` for real ``x <= 0`` (scalar or array)."""
    _check_alpha(alpha)
    alpha = float(alpha)
    beta = float(beta)
    xa = np.asarray(x, dtype=float)
    if np.any(xa > 0):
        raise InvalidArgumentError("mittag_leffler is implemented for x <= 0 only")
    y = -xa.ravel()
    if alpha == 1.0:
        out = _alpha_one(beta, y)
        return out.reshape(xa.shape) if xa.ndim else float(out[0])
    out = np.empty_like(y)
    s_lim = series_limit(alpha)
    ser = y <= s_lim
    big = y >= X_ASYM
    mid = ~ser & ~big
    if np.any(ser):
        out[ser] = _series(alpha, beta, y[ser])
    if np.any(big):
        val, ok = _asymptotic(alpha, beta, y[big])
        idx = np.flatnonzero(big)
        out[idx[ok]] = val[ok]
        for i in idx[~ok]:
            out[i] = _branch_cut_integral(alpha, beta, float(y[i]))
    if np.any(mid):
        out[mid] = _mid(alpha, beta, y[mid])
    return out.reshape(xa.shape) if xa.ndim else float(out[0])
