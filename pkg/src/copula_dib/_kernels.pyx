# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops.

Every function here has a numpy twin in :mod:`copula_dib._fallback` with the
same signature; :mod:`copula_dib.kernels` picks one at import time.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, log1p, lgamma, fabs, fmax
from libc.stdint cimport uint64_t

cnp.import_array()

cdef double _TINY = 1e-300
cdef double _EPS = 1e-16
cdef int _MAXIT = 1000


def softplus_forward(z_in):
    """Return ``(softplus(z), logistic(z))`` in a single pass."""
    cdef cnp.ndarray[double, ndim=1] z = np.ascontiguousarray(z_in, dtype=np.float64).ravel()
    cdef Py_ssize_t n = z.shape[0], i
    cdef cnp.ndarray[double, ndim=1] h = np.empty(n, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] s = np.empty(n, dtype=np.float64)
    cdef double v, e, u, r
    with nogil:
        for i in range(n):
            v = z[i]
            e = exp(-fabs(v))
            u = 1.0 + e
            r = 1.0 / u
            # log1p(e) as log(u) corrected for the rounding of 1 + e
            h[i] = fmax(v, 0.0) + (log(u) - ((u - 1.0) - e) * r)
            if v >= 0:
                s[i] = r
            else:
                s[i] = e * r
    shape = np.shape(z_in)
    return h.reshape(shape), s.reshape(shape)


cdef inline uint64_t _mix(uint64_t z) nogil:
    z = (z ^ (z >> 30)) * <uint64_t>0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * <uint64_t>0x94D049BB133111EBULL
    return z ^ (z >> 31)


def counter_uniform(uint64_t key, uint64_t start, Py_ssize_t n):
    """Uniform doubles in the open interval (0, 1) for counters start..start+n-1."""
    cdef cnp.ndarray[double, ndim=1] out = np.empty(n, dtype=np.float64)
    cdef Py_ssize_t i
    cdef uint64_t golden = <uint64_t>0x9E3779B97F4A7C15ULL
    cdef uint64_t h
    with nogil:
        for i in range(n):
            h = _mix(key + (start + <uint64_t>i + 1) * golden)
            out[i] = (<double>(h >> 11) + 0.5) * (1.0 / 9007199254740992.0)
    return out


cdef double _betacf(double a, double b, double x) nogil:
    cdef double qab = a + b, qap = a + 1.0, qam = a - 1.0
    cdef double c = 1.0, d = 1.0 - qab * x / qap, h, aa, de
    cdef int m, m2
    if fabs(d) < _TINY:
        d = _TINY
    d = 1.0 / d
    h = d
    for m in range(1, _MAXIT + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if fabs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if fabs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if fabs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if fabs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        de = d * c
        h *= de
        if fabs(de - 1.0) < _EPS:
            break
    return h


cdef double _betainc(double a, double b, double x) nogil:
    cdef double lbt
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    lbt = lgamma(a + b) - lgamma(a) - lgamma(b) + a * log(x) + b * log1p(-x)
    if x < (a + 1.0) / (a + b + 2.0):
        return exp(lbt) * _betacf(a, b, x) / a
    return 1.0 - exp(lbt) * _betacf(b, a, 1.0 - x) / b


def betainc(double a, double b, x_in):
    """Regularized incomplete beta I_x(a, b), elementwise over ``x``."""
    cdef cnp.ndarray[double, ndim=1] x = np.ascontiguousarray(x_in, dtype=np.float64).ravel()
    cdef Py_ssize_t n = x.shape[0], i
    cdef cnp.ndarray[double, ndim=1] out = np.empty(n, dtype=np.float64)
    with nogil:
        for i in range(n):
            out[i] = _betainc(a, b, x[i])
    return out.reshape(np.shape(x_in))


cdef double _gser(double a, double x, double gln) nogil:
    # lower regularized gamma by series, valid for x < a + 1
    cdef double ap = a, s = 1.0 / a, de = s
    cdef int n
    for n in range(_MAXIT):
        ap += 1.0
        de *= x / ap
        s += de
        if fabs(de) < fabs(s) * _EPS:
            break
    return s * exp(-x + a * log(x) - gln)


cdef double _gcf(double a, double x, double gln) nogil:
    # upper regularized gamma by Lentz continued fraction, valid for x >= a + 1
    cdef double b = x + 1.0 - a, c = 1.0 / _TINY, d = 1.0 / b, h = d, an, de
    cdef int i
    for i in range(1, _MAXIT + 1):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if fabs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if fabs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        de = d * c
        h *= de
        if fabs(de - 1.0) < _EPS:
            break
    return exp(-x + a * log(x) - gln) * h


def gammainc(double a, x_in, bint upper=False):
    """Regularized lower (or upper) incomplete gamma, elementwise over ``x``."""
    cdef cnp.ndarray[double, ndim=1] x = np.ascontiguousarray(x_in, dtype=np.float64).ravel()
    cdef Py_ssize_t n = x.shape[0], i
    cdef cnp.ndarray[double, ndim=1] out = np.empty(n, dtype=np.float64)
    cdef double gln = lgamma(a), v, p
    with nogil:
        for i in range(n):
            v = x[i]
            if v <= 0.0:
                p = 1.0 if upper else 0.0
            elif v < a + 1.0:
                p = _gser(a, v, gln)
                if upper:
                    p = 1.0 - p
            else:
                p = _gcf(a, v, gln)
                if not upper:
                    p = 1.0 - p
            out[i] = p
    return out.reshape(np.shape(x_in))
