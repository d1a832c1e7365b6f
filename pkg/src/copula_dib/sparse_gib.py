"""Sparse Gaussian information bottleneck estimators.

Samples are stored row-wise (``n x p``); the ``p x p`` Gram matrix
``M^T M / n`` has the same nonzero spectrum as the ``n x n`` form, so both
estimators work on the small matrix.
"""
from __future__ import annotations

import numpy as np

from .errors import DataError, UsageError
from .nn import Rng


def _gram(sample) -> np.ndarray:
    m = np.asarray(sample, dtype=np.float64)
    if m.ndim == 1:
        m = m[:, None]
    if m.ndim != 2 or m.shape[0] < 1:
        raise UsageError("sample must be a non-empty n x p matrix")
    if not np.all(np.isfinite(m)):
        raise DataError("sample contains non-finite entries")
    return m.T @ m / m.shape[0]


def mi_full(sample) -> float:
    """``0.5 * log det(G + I)`` via Cholesky of the always-PD ``G + I``."""
    g = _gram(sample)
    chol = np.linalg.cholesky(g + np.eye(g.shape[0]))
    return float(np.sum(np.log(np.diag(chol))))


def mi_diag_bound(sample) -> float:
    """Hadamard upper bound ``0.5 * sum(log(G_ii + 1))`` on :func:`mi_full`."""
    g = _gram(sample)
    return float(0.5 * np.sum(np.log1p(np.diag(g))))


def noisy_projection(a_diag, x, rng: Rng | None = None, noise: np.ndarray | None = None) -> np.ndarray:
    """``t = x * a + xi`` per row with ``xi ~ N(0, I)``; ``noise`` overrides the draw."""
    a = np.asarray(a_diag, dtype=np.float64).ravel()
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != a.size:
        raise UsageError(f"a_diag has length {a.size}, x has shape {x.shape}")
    if noise is None:
        if rng is None:
            raise UsageError("noisy_projection needs rng or noise")
        noise = rng.standard_normal(*x.shape)
    return x * a + noise
