"""Special functions and rank statistics used by the rest of the package.

All functions accept scalars or arrays. Scalar input gives a Python float
back; array input gives an array of the same shape.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import kernels
from .errors import DomainError, UsageError

__all__ = [
    "KruskalResult",
    "beta_cdf",
    "beta_quantile",
    "chi2_sf",
    "gamma_cdf",
    "gamma_quantile",
    "kruskal_wallis",
    "midranks",
    "norm_cdf",
    "norm_pdf",
    "norm_quantile",
]

_SQRT2 = math.sqrt(2.0)
_SQRT2PI = math.sqrt(2.0 * math.pi)
_erfc_obj = np.frompyfunc(math.erfc, 1, 1)


def _erfc(x: np.ndarray) -> np.ndarray:
    return np.asarray(_erfc_obj(x), dtype=np.float64)

# Acklam's rational approximation for the lower half
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549671010229528e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_P_LOW = 0.02425


def _out(arr: np.ndarray, scalar: bool):
    return float(arr) if scalar else arr


def norm_pdf(x):
    """Standard normal density."""
    x = np.asarray(x, dtype=np.float64)
    return np.exp(-0.5 * x * x) / _SQRT2PI


def norm_cdf(x):
    """Standard normal CDF, computed from ``erfc`` to keep tail accuracy.

    Raises
    ------
    DomainError
        If any input is NaN or infinite.
    """
    scalar = np.ndim(x) == 0
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise DomainError("norm_cdf: input must be finite")
    out = 0.5 * _erfc(-x / _SQRT2)
    return _out(out, scalar)


def _lower_tail_guess(p: np.ndarray) -> np.ndarray:
    # p in (0, 0.5]; returns x <= 0 with Phi(x) ~ p
    x = np.empty_like(p)
    tail = p < _P_LOW
    if np.any(tail):
        q = np.sqrt(-2.0 * np.log(p[tail]))
        c, d = _C, _D
        num = ((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]
        den = (((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0
        x[tail] = num / den
    mid = ~tail
    if np.any(mid):
        q = p[mid] - 0.5
        r = q * q
        a, b = _A, _B
        num = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q
        den = ((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0
        x[mid] = num / den
    return x


def norm_quantile(u):
    """Inverse of the standard normal CDF.

    A rational approximation followed by one Halley refinement step on
    :func:`norm_cdf`.
    The lower tail is always solved and mirrored, so
    ``norm_quantile(1 - u) == -norm_quantile(u)`` whenever ``1 - u`` is exact.

    Raises
    ------
    DomainError
        Unless ``0 < u < 1`` everywhere. Callers clamp before calling.
    """
    scalar = np.ndim(u) == 0
    u = np.asarray(u, dtype=np.float64)
    if not np.all((u > 0.0) & (u < 1.0)):
        raise DomainError("norm_quantile: u must lie strictly inside (0, 1)")
    upper = u > 0.5
    p = np.where(upper, 1.0 - u, u)
    x = _lower_tail_guess(p)
    # one Halley step (Newton with curvature term) on norm_cdf
    t = (0.5 * _erfc(-x / _SQRT2) - p) * _SQRT2PI * np.exp(0.5 * x * x)
    x = x - t / (1.0 + 0.5 * x * t)
    x = np.where(upper, -x, x)
    return _out(x, scalar)


def beta_cdf(x, a: float, b: float):
    """Regularized incomplete beta function I_x(a, b)."""
    if not (a > 0 and b > 0):
        raise DomainError(f"beta_cdf: shape parameters must be positive, got a={a}, b={b}")
    scalar = np.ndim(x) == 0
    x = np.clip(np.asarray(x, dtype=np.float64), 0.0, 1.0)
    return _out(kernels.betainc(float(a), float(b), x), scalar)


def gamma_cdf(x, shape: float, scale: float = 1.0):
    """Regularized lower incomplete gamma P(shape, x / scale)."""
    if not (shape > 0 and scale > 0):
        raise DomainError(f"gamma_cdf: shape and scale must be positive, got {shape}, {scale}")
    scalar = np.ndim(x) == 0
    x = np.maximum(np.asarray(x, dtype=np.float64) / scale, 0.0)
    return _out(kernels.gammainc(float(shape), x), scalar)


def _bracketed_newton(u, cdf, log_pdf, lo, hi, max_iter=400):
    """Solve cdf(x) = u inside [lo, hi]; Newton steps that leave the bracket bisect."""
    x = 0.5 * (lo + hi)
    for _ in range(max_iter):
        f = cdf(x) - u
        lo = np.where(f < 0, x, lo)
        hi = np.where(f > 0, x, hi)
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            step = f / np.exp(log_pdf(x))
            x_new = x - step
        bad = ~np.isfinite(x_new) | (x_new <= lo) | (x_new >= hi)
        x_new = np.where(bad, 0.5 * (lo + hi), x_new)
        x_new = np.where(f == 0, x, x_new)
        done = (np.abs(x_new - x) <= 1e-15 * np.abs(x)) | (hi - lo <= 1e-15 * np.abs(hi))
        x = x_new
        if np.all(done):
            break
    return x


def beta_quantile(u, a: float, b: float):
    """Inverse of the Beta(a, b) CDF.

    ``u`` may be 0 or 1 (mapped to 0 and 1). Accuracy is better than 1e-10
    in ``x`` for moderate shape parameters.
    """
    if not (a > 0 and b > 0):
        raise DomainError(f"beta_quantile: shape parameters must be positive, got a={a}, b={b}")
    scalar = np.ndim(u) == 0
    u = np.asarray(u, dtype=np.float64)
    if not np.all((u >= 0.0) & (u <= 1.0)):
        raise DomainError("beta_quantile: u must lie in [0, 1]")
    a = float(a)
    b = float(b)
    out = np.where(u >= 1.0, 1.0, 0.0)
    inner = (u > 0.0) & (u < 1.0)
    if np.any(inner):
        lbeta = math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b)
        # solve on distinct values only; rank-derived inputs repeat heavily
        uniq, inv = np.unique(u[inner], return_inverse=True)

        def log_pdf(x):
            return (a - 1.0) * np.log(x) + (b - 1.0) * np.log1p(-x) - lbeta

        sol = _bracketed_newton(
            uniq,
            lambda x: kernels.betainc(a, b, x),
            log_pdf,
            np.zeros_like(uniq),
            np.ones_like(uniq),
        )
        out[inner] = sol[inv]
    return _out(out, scalar)


def gamma_quantile(u, shape: float, scale: float = 1.0):
    """Inverse of the Gamma(shape, scale) CDF for ``0 <= u < 1``."""
    if not (shape > 0 and scale > 0):
        raise DomainError(f"gamma_quantile: shape and scale must be positive, got {shape}, {scale}")
    scalar = np.ndim(u) == 0
    u = np.asarray(u, dtype=np.float64)
    if not np.all((u >= 0.0) & (u < 1.0)):
        raise DomainError("gamma_quantile: u must lie in [0, 1)")
    k = float(shape)
    out = np.zeros_like(u)
    inner = u > 0.0
    if np.any(inner):
        gln = math.lgamma(k)
        uniq, inv = np.unique(u[inner], return_inverse=True)
        hi = np.full_like(uniq, max(1.0, k))
        while True:
            short = kernels.gammainc(k, hi) < uniq
            if not short.any():
                break
            hi = np.where(short, 2.0 * hi, hi)

        def log_pdf(x):
            return (k - 1.0) * np.log(x) - x - gln

        sol = _bracketed_newton(
            uniq, lambda x: kernels.gammainc(k, x), log_pdf, np.zeros_like(uniq), hi
        )
        out[inner] = sol[inv]
    return _out(out * scale, scalar)


def chi2_sf(x, dof: int):
    """Chi-squared survival function via the upper regularized incomplete gamma."""
    if dof < 1:
        raise DomainError("chi2_sf: degrees of freedom must be >= 1")
    scalar = np.ndim(x) == 0
    x = np.maximum(np.asarray(x, dtype=np.float64), 0.0)
    return _out(kernels.gammainc(0.5 * dof, 0.5 * x, True), scalar)


def midranks(values) -> np.ndarray:
    """1-based ranks with ties sharing the average of their positions."""
    v = np.asarray(values, dtype=np.float64).ravel()
    order = np.argsort(v, kind="mergesort")
    sv = v[order]
    ranks = np.empty(v.size, dtype=np.float64)
    # boundaries of tie blocks in sorted order
    edges = np.flatnonzero(np.diff(sv) != 0) + 1
    starts = np.concatenate(([0], edges))
    stops = np.concatenate((edges, [v.size]))
    block_rank = 0.5 * (starts + 1 + stops)
    ranks[order] = np.repeat(block_rank, stops - starts)
    return ranks


@dataclass(frozen=True)
class KruskalResult:
    h_statistic: float
    p_value: float
    degrees_of_freedom: int


def kruskal_wallis(groups: Sequence[Sequence[float]]) -> KruskalResult:
    """Kruskal-Wallis H test with midranks and tie correction.

    H is evaluated as ``(N - 1) * SS_between / SS_total`` over the ranks, which
    equals the textbook statistic divided by the tie-correction factor and is
    exactly zero when every group has the same mean rank.
    """
    groups = [np.asarray(g, dtype=np.float64).ravel() for g in groups]
    if len(groups) < 2:
        raise UsageError("kruskal_wallis needs at least two groups")
    if any(g.size == 0 for g in groups):
        raise UsageError("kruskal_wallis: empty group")
    sizes = np.array([g.size for g in groups])
    ranks = midranks(np.concatenate(groups))
    n = ranks.size
    grand = 0.5 * (n + 1)
    total_ss = float(np.sum((ranks - grand) ** 2))
    dof = len(groups) - 1
    if total_ss == 0.0:
        # every observation tied
        return KruskalResult(0.0, 1.0, dof)
    bounds = np.cumsum(sizes)[:-1]
    means = np.array([r.mean() for r in np.split(ranks, bounds)])
    between = float(np.sum(sizes * (means - grand) ** 2))
    h = max((n - 1) * between / total_ss, 0.0)
    p = min(max(float(chi2_sf(h, dof)), 0.0), 1.0)
    return KruskalResult(h, p, dof)
