"""Generalized lambda distribution, FKML parameterization.

The distribution is defined through its quantile function

.. math::

    Q(u) = \\lambda_1 + \\frac{1}{\\lambda_2}\\left(
        \\frac{u^{\\lambda_3} - 1}{\\lambda_3}
        - \\frac{(1 - u)^{\\lambda_4} - 1}{\\lambda_4}\\right)

so sampling is an inverse transform and the density requires a numerical
inversion of ``Q``. Every function here broadcasts over array-valued
parameters, which is how the GLaM code evaluates one distribution per input
point.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy import special

from .errors import DomainError, InvalidParametersError, MomentUndefinedError

ArrayLike = Union[float, np.ndarray]

DEFAULT_TOL = 1e-10
MAX_BISECTION_ITER = 200
# below this |lambda| the Box-Cox term is replaced by its log limit
SHAPE_ZERO = 1e-6
# half-width of the interpolation window for moment terms with a removable
# singularity at lambda3 = 0 or lambda4 = 0
_MOMENT_EPS = 1e-4


@dataclass(frozen=True)
class GldParams:
    """The four FKML parameters. Fields may be scalars or broadcastable arrays."""

    lambda1: ArrayLike
    lambda2: ArrayLike
    lambda3: ArrayLike
    lambda4: ArrayLike

    def __post_init__(self):
        lam = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in self.astuple()))
        if not all(np.all(np.isfinite(v)) for v in lam):
            raise InvalidParametersError("GLD parameters must be finite")
        if np.any(lam[1] <= 0):
            raise InvalidParametersError("lambda2 must be positive")

    def astuple(self):
        return (self.lambda1, self.lambda2, self.lambda3, self.lambda4)

    def arrays(self):
        """Return the parameters as broadcast float arrays."""
        return np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in self.astuple()))

    def __getitem__(self, idx):
        l1, l2, l3, l4 = self.arrays()
        return GldParams(l1[idx], l2[idx], l3[idx], l4[idx])


@dataclass(frozen=True)
class SupportBounds:
    lower: ArrayLike
    upper: ArrayLike


def _boxcox(v, lam):
    """(v**lam - 1) / lam with the log limit near lam = 0."""
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        logv = np.log(v)
        small = np.abs(lam) < SHAPE_ZERO
        safe = np.where(small, 1.0, lam)
        out = np.where(small, logv, np.expm1(safe * logv) / safe)
    return out


def _quantile_arrays(u, l1, l2, l3, l4):
    return l1 + (_boxcox(u, l3) - _boxcox(1.0 - u, l4)) / l2


def _density_denominator(u, l3, l4):
    """u**(l3-1) + (1-u)**(l4-1), i.e. lambda2 times dQ/du."""
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        return np.power(u, l3 - 1.0) + np.power(1.0 - u, l4 - 1.0)


def quantile(p: GldParams, u: ArrayLike) -> np.ndarray:
    """Evaluate the quantile function; u = 0 or 1 gives the support endpoints."""
    u = np.asarray(u, dtype=float)
    if np.any((u < 0) | (u > 1)) or np.any(np.isnan(u)):
        raise DomainError("u must lie in [0, 1]")
    out = _quantile_arrays(u, *p.arrays())
    return out if out.ndim else float(out)


def _support_arrays(l1, l2, l3, l4):
    # shapes inside the log-limit band behave as 0, matching quantile(0), quantile(1)
    fin3 = l3 >= SHAPE_ZERO
    fin4 = l4 >= SHAPE_ZERO
    lower = np.where(fin3, l1 - 1.0 / (l2 * np.where(fin3, l3, 1.0)), -np.inf)
    upper = np.where(fin4, l1 + 1.0 / (l2 * np.where(fin4, l4, 1.0)), np.inf)
    return lower, upper


def support(p: GldParams) -> SupportBounds:
    """Support endpoints; infinite on a side whose shape parameter is <= 0."""
    lower, upper = _support_arrays(*p.arrays())
    if lower.ndim == 0:
        return SupportBounds(float(lower), float(upper))
    return SupportBounds(lower, upper)


def _bisect(y, l1, l2, l3, l4, tol):
    """Solve Q(u) = y for u by bisection; y outside the support clamps to 0/1."""
    y, l1, l2, l3, l4 = np.broadcast_arrays(
        np.asarray(y, dtype=float), l1, l2, l3, l4)
    lo = np.zeros(y.shape)
    hi = np.ones(y.shape)
    width = 1.0
    for _ in range(MAX_BISECTION_ITER):
        if width <= tol:
            break
        mid = 0.5 * (lo + hi)
        below = _quantile_arrays(mid, l1, l2, l3, l4) < y
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
        width *= 0.5
    u = 0.5 * (lo + hi)
    lower, upper = _support_arrays(l1, l2, l3, l4)
    u = np.where(y <= lower, 0.0, u)
    u = np.where(y >= upper, 1.0, u)
    return u


def cdf(p: GldParams, y: ArrayLike, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Invert the quantile function to precision ``tol`` in u."""
    if tol <= 0:
        raise DomainError("tol must be positive")
    out = _bisect(y, *p.arrays(), tol)
    return out if out.ndim else float(out)


def _log_pdf_at_u(u, l2, l3, l4):
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.log(l2) - np.log(_density_denominator(u, l3, l4))


def log_pdf(p: GldParams, y: ArrayLike, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Log density; ``-inf`` strictly outside the support."""
    if tol <= 0:
        raise DomainError("tol must be positive")
    l1, l2, l3, l4 = p.arrays()
    y = np.asarray(y, dtype=float)
    u = _bisect(y, l1, l2, l3, l4, tol)
    out = _log_pdf_at_u(u, l2, l3, l4)
    lower, upper = _support_arrays(l1, l2, l3, l4)
    outside = (y < lower) | (y > upper)
    out = np.where(outside, -np.inf, out)
    return out if out.ndim else float(out)


def pdf(p: GldParams, y: ArrayLike, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Density lambda2 / (u**(l3-1) + (1-u)**(l4-1)) at u = cdf(y); 0 outside."""
    out = np.exp(log_pdf(p, y, tol))
    return out if np.ndim(out) else float(out)


def sample(p: GldParams, rng: np.random.Generator, n: int) -> np.ndarray:
    """Draw ``n`` variates by inverse transform (n uniforms per parameter set)."""
    if n < 1:
        raise DomainError("sample size must be at least 1")
    l1, l2, l3, l4 = p.arrays()
    u = rng.random((n,) + l1.shape)
    return _quantile_arrays(u, l1, l2, l3, l4)


# ---------------------------------------------------------------------------
# moments and risk functionals


def _smooth_at_zero(func, l3, l4):
    """Evaluate func(l3, l4) replacing points near the removable singularities
    at l3 = 0 and/or l4 = 0 by linear interpolation across [-eps, eps]."""
    eps = _MOMENT_EPS
    l3, l4 = np.broadcast_arrays(np.asarray(l3, float), np.asarray(l4, float))

    def along_l4(a3):
        near = np.abs(l4) < eps
        b4 = np.where(near, eps, l4)
        val = func(a3, b4)
        if np.any(near):
            lo = func(a3, -eps * np.ones_like(l4))
            hi = func(a3, eps * np.ones_like(l4))
            w = (l4 + eps) / (2 * eps)
            val = np.where(near, (1 - w) * lo + w * hi, val)
        return val

    near3 = np.abs(l3) < eps
    val = along_l4(np.where(near3, eps, l3))
    if np.any(near3):
        lo = along_l4(-eps * np.ones_like(l3))
        hi = along_l4(eps * np.ones_like(l3))
        w = (l3 + eps) / (2 * eps)
        val = np.where(near3, (1 - w) * lo + w * hi, val)
    return val


def _cross_moment(l3, l4):
    """E[a(U) b(U)] with a = boxcox(U, l3), b = boxcox(1-U, l4)."""
    beta = special.beta(l3 + 1.0, l4 + 1.0)
    return (beta - 1.0 / (l3 + 1.0) - 1.0 / (l4 + 1.0) + 1.0) / (l3 * l4)


def _require_shapes(l3, l4, bound, what):
    if np.any(l3 <= bound) or np.any(l4 <= bound):
        raise MomentUndefinedError(
            f"{what} requires lambda3, lambda4 > {bound}")


def mean(p: GldParams) -> ArrayLike:
    l1, l2, l3, l4 = p.arrays()
    _require_shapes(l3, l4, -1.0, "mean")
    out = l1 - (1.0 / (l3 + 1.0) - 1.0 / (l4 + 1.0)) / l2
    return out if out.ndim else float(out)


def variance(p: GldParams) -> ArrayLike:
    l1, l2, l3, l4 = p.arrays()
    _require_shapes(l3, l4, -0.5, "variance")

    def var_a(lam):
        return 2.0 / ((2 * lam + 1) * (lam + 1)) - 1.0 / (lam + 1) ** 2

    cov = _smooth_at_zero(_cross_moment, l3, l4) - 1.0 / ((l3 + 1) * (l4 + 1))
    out = (var_a(l3) + var_a(l4) - 2.0 * cov) / l2**2
    return out if out.ndim else float(out)


def _partial_integral(lam, t):
    """Integral of boxcox(s, lam) for s in [0, t]."""
    lam, t = np.broadcast_arrays(np.asarray(lam, float), np.asarray(t, float))
    with np.errstate(divide="ignore", invalid="ignore"):
        logt = np.log(np.where(t > 0, t, 1.0))
        small = np.abs(lam) < SHAPE_ZERO
        safe = np.where(small, 1.0, lam)
        ratio = np.where(small, logt, np.expm1(safe * logt) / safe)
        out = t * (ratio - 1.0) / (1.0 + lam)
    return np.where(t > 0, out, 0.0)


def _upper_integral(l1, l2, l3, l4, t):
    """Integral of Q(u) for u in [t, 1]."""
    int_a = -1.0 / (l3 + 1.0) - _partial_integral(l3, t)
    int_b = _partial_integral(l4, 1.0 - t)
    return l1 * (1.0 - t) + (int_a - int_b) / l2


def expected_payoff(p: GldParams, strike: ArrayLike, tol: float = DEFAULT_TOL) -> ArrayLike:
    """E[max(Y - K, 0)] in closed form given u_K = cdf(K)."""
    l1, l2, l3, l4 = p.arrays()
    _require_shapes(l3, l4, -1.0, "expected payoff")
    strike = np.asarray(strike, dtype=float)
    u_k = _bisect(strike, l1, l2, l3, l4, tol)
    out = _upper_integral(l1, l2, l3, l4, u_k) - strike * (1.0 - u_k)
    out = np.maximum(out, 0.0)
    return out if out.ndim else float(out)


def superquantile(p: GldParams, alpha: float) -> ArrayLike:
    """E[Y | Y >= q_alpha], the conditional value-at-risk at level alpha."""
    if not 0.0 < alpha < 1.0:
        raise DomainError("alpha must lie in (0, 1)")
    l1, l2, l3, l4 = p.arrays()
    _require_shapes(l3, l4, -1.0, "superquantile")
    out = _upper_integral(l1, l2, l3, l4, alpha) / (1.0 - alpha)
    return out if np.ndim(out) else float(out)


def entropy_mc(p: GldParams, rng: np.random.Generator, n: int) -> ArrayLike:
    """Monte Carlo estimate of the differential entropy, mean of -log f(Y).

    The density at a draw Y = Q(U) is evaluated at the generating U directly,
    which is the exact solution of the inversion that ``pdf`` performs.
    """
    if n < 1:
        raise DomainError("sample size must be at least 1")
    l1, l2, l3, l4 = p.arrays()
    u = rng.random((n,) + l1.shape)
    out = -np.mean(_log_pdf_at_u(u, l2, l3, l4), axis=0)
    return out if np.ndim(out) else float(out)
