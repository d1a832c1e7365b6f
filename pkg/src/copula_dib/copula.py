"""Empirical-CDF normal scores and a Gaussian-copula multi-information estimate.

The forward map sends a value to ``norm_quantile(F(x))`` where ``F`` gives
the i-th smallest fitting point the probability ``i / (n + 1)`` (midranks
for ties) and interpolates linearly between fitting points. The inverse
applies ``norm_cdf`` and then the piecewise-linear empirical quantile
function. Both ends clamp to the fitted range.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import DataError, NumericError, UsageError
from .numerics import norm_cdf, norm_quantile

__all__ = [
    "CopulaTransform",
    "fit",
    "from_normal_scores",
    "gaussian_copula_mi",
    "to_normal_scores",
]


def _as_matrix(data) -> np.ndarray:
    a = np.asarray(data, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise UsageError(f"expected a 2-D samples x features matrix, got shape {a.shape}")
    return a


@dataclass(frozen=True, eq=False)
class CopulaTransform:
    """Per-column sorted fitting samples. Immutable once built."""

    sorted_values: np.ndarray  # (n_fit, n_cols), each column ascending

    @property
    def n_fit(self) -> int:
        return self.sorted_values.shape[0]

    @property
    def n_cols(self) -> int:
        return self.sorted_values.shape[1]

    @cached_property
    def _knots(self) -> list[tuple[np.ndarray, np.ndarray]]:
        # distinct fitted values and their midrank probabilities, per column
        n = self.n_fit
        knots = []
        for col in self.sorted_values.T:
            uniq, counts = np.unique(col, return_counts=True)
            stop = np.cumsum(counts)
            midrank = 0.5 * (stop - counts + 1 + stop)
            knots.append((uniq, midrank / (n + 1)))
        return knots

    def digest(self) -> str:
        """Content hash, used to check that held-out data reuses a training fit."""
        h = hashlib.sha256(str(self.sorted_values.shape).encode())
        h.update(np.ascontiguousarray(self.sorted_values, dtype="<f8").tobytes())
        return h.hexdigest()

    def probabilities(self, data) -> np.ndarray:
        """Empirical CDF values, clamped to ``[1/(n+1), n/(n+1)]``."""
        x = _as_matrix(data)
        if x.shape[1] != self.n_cols:
            raise UsageError(f"transform fitted on {self.n_cols} columns, got {x.shape[1]}")
        n = self.n_fit
        lo, hi = 1.0 / (n + 1), n / (n + 1.0)
        u = np.empty_like(x)
        for j, (uniq, probs) in enumerate(self._knots):
            v = x[:, j]
            uj = np.interp(v, uniq, probs, left=lo, right=hi)
            # exact hits take the midrank value directly so scores depend only on ranks
            pos = np.clip(np.searchsorted(uniq, v), 0, uniq.size - 1)
            hit = uniq[pos] == v
            uj[hit] = probs[pos[hit]]
            u[:, j] = uj
        return u


def fit(data) -> CopulaTransform:
    """Sort each column of the fitting sample.

    Raises
    ------
    UsageError
        Fewer than two rows.
    DataError
        Non-finite entries or a constant column.
    """
    x = _as_matrix(data)
    if x.shape[0] < 2:
        raise UsageError("copula fit needs at least two rows")
    if not np.all(np.isfinite(x)):
        raise DataError("copula fit: data contains non-finite entries")
    s = np.sort(x, axis=0, kind="stable")
    constant = np.flatnonzero(s[0] == s[-1])
    if constant.size:
        raise DataError(f"copula fit: constant column(s) {constant.tolist()} have no usable ranks")
    s.setflags(write=False)
    return CopulaTransform(s)


def to_normal_scores(t: CopulaTransform, data) -> np.ndarray:
    """Map data to normal scores with a fitted transform."""
    return norm_quantile(t.probabilities(data))


def from_normal_scores(t: CopulaTransform, scores) -> np.ndarray:
    """Map normal scores back to the data scale through the empirical quantiles."""
    s = _as_matrix(scores)
    if s.shape[1] != t.n_cols:
        raise UsageError(f"transform fitted on {t.n_cols} columns, got {s.shape[1]}")
    u = norm_cdf(s)
    out = np.empty_like(s)
    for j, (uniq, probs) in enumerate(t._knots):
        out[:, j] = np.interp(u[:, j], probs, uniq)
    return out


def gaussian_copula_mi(scores) -> float:
    """``-0.5 * log det R`` for the sample correlation matrix ``R`` of the scores.

    Under a Gaussian copula this is the multi-information (negative copula
    entropy) in nats.

    Raises
    ------
    NumericError
        If ``R`` is not numerically positive definite; the message carries
        its condition number.
    """
    s = _as_matrix(scores)
    n, d = s.shape
    if d < 2:
        raise UsageError("gaussian_copula_mi needs at least two columns")
    if n <= d:
        raise UsageError("gaussian_copula_mi needs more rows than columns")
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.corrcoef(s, rowvar=False)
    if not np.all(np.isfinite(r)):
        raise NumericError("correlation matrix is undefined (constant column?)")
    try:
        chol = np.linalg.cholesky(r)
    except np.linalg.LinAlgError:
        raise NumericError(
            f"correlation matrix is singular (condition number {np.linalg.cond(r):.3e})"
        ) from None
    logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
    if not math.isfinite(logdet):
        raise NumericError(f"correlation matrix is singular (condition number {np.linalg.cond(r):.3e})")
    return max(-0.5 * logdet, 0.0)
