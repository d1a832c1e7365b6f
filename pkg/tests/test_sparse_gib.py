import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as hs
from hypothesis.extra import numpy as hnp

from copula_dib.errors import DataError, UsageError
from copula_dib.nn import Rng
from copula_dib.sparse_gib import mi_diag_bound, mi_full, noisy_projection

HALF_LN4 = 0.5 * math.log(4)
FULL_RHO09 = 0.5 * math.log(4 - 0.81)


def _sample_with_gram(g, n=4):
    """Rows m with m^T m / n == g exactly up to rounding (via a Cholesky factor)."""
    c = np.linalg.cholesky(np.asarray(g, float))
    q = np.linalg.qr(np.random.default_rng(0).normal(size=(n, c.shape[0])))[0]
    return math.sqrt(n) * q @ c.T


def test_zero_sample():
    assert mi_full(np.zeros((5, 3))) == 0.0
    assert mi_diag_bound(np.zeros((5, 3))) == 0.0


def test_scalar_second_moment_three():
    s = np.array([[math.sqrt(3)], [-math.sqrt(3)]])
    assert abs(mi_full(s) - HALF_LN4) < 1e-10
    assert abs(HALF_LN4 - 0.6931471806) < 1e-10


def test_duplication_invariance(np_rng):
    s = np_rng.normal(size=(30, 4))
    assert abs(mi_full(np.concatenate([s, s])) - mi_full(s)) <= 1e-12


def test_two_by_two_example():
    s = _sample_with_gram([[1, 0.9], [0.9, 1]])
    assert abs(mi_diag_bound(s) - HALF_LN4) < 1e-12
    assert abs(mi_full(s) - FULL_RHO09) < 1e-12
    assert abs(FULL_RHO09 - 0.5800) < 1e-4
    assert mi_diag_bound(s) > mi_full(s)


def test_equality_on_diagonal_gram():
    s = _sample_with_gram(np.diag([0.5, 2.0, 7.0]), n=6)
    assert abs(mi_diag_bound(s) - mi_full(s)) <= 1e-12


def test_hadamard_1000_samples():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        p = int(rng.integers(1, 6))
        s = rng.normal(size=(int(rng.integers(1, 20)), p)) * rng.uniform(0.1, 3, p)
        assert mi_diag_bound(s) >= mi_full(s) - 1e-12


def test_rotation_invariance(np_rng):
    s = np_rng.normal(size=(50, 4))
    q = np.linalg.qr(np_rng.normal(size=(4, 4)))[0]
    assert abs(mi_full(s @ q) - mi_full(s)) <= 1e-10


@given(hnp.arrays(np.float64, hs.tuples(hs.integers(1, 12), hs.integers(1, 4)),
                  elements=hs.floats(-20, 20)), hs.floats(1, 10))
def test_non_negative_and_scaling(s, scale):
    full, diag = mi_full(s), mi_diag_bound(s)
    assert 0 <= full <= diag + 1e-12
    assert mi_full(scale * s) >= full - 1e-12
    assert mi_diag_bound(scale * s) >= diag - 1e-12


def test_non_finite():
    with pytest.raises(DataError):
        mi_full(np.array([[np.inf]]))


def test_projection_examples():
    x = np.random.default_rng(1).normal(size=(10, 2))
    xi = np.random.default_rng(2).normal(size=(10, 2))
    assert np.array_equal(noisy_projection([0, 0], x, noise=xi), xi)
    assert np.array_equal(noisy_projection([1, 1], x, noise=np.zeros_like(x)), x)
    assert mi_full(noisy_projection([0, 0], x, noise=np.zeros_like(x))) == 0.0


def test_projection_noise_column():
    n = 100_000
    t = noisy_projection([2.0, 0.0], np.ones((n, 2)), Rng(8))
    se = 1 / math.sqrt(n)
    assert abs(t[:, 1].mean()) < 4 * se
    assert abs(t[:, 1].var() - 1) < 4 * math.sqrt(2) * se


def test_projection_length_mismatch():
    with pytest.raises(UsageError):
        noisy_projection([1.0], np.zeros((3, 2)), Rng(0))
