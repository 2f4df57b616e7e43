# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the numerical hot loops in ``_kernels_py``."""

import numpy as np

from libc.math cimport exp, fabs, lgamma, log, log1p

cdef double CF_EPS = 1e-15
cdef double CF_TINY = 1e-300
cdef int CF_MAXIT = 10000


cdef double _betacf(double a, double b, double x) except? -1.0:
    cdef double qab = a + b
    cdef double qap = a + 1.0
    cdef double qam = a - 1.0
    cdef double c = 1.0
    cdef double d = 1.0 - qab * x / qap
    cdef double h, aa, delta
    cdef int m, m2
    if fabs(d) < CF_TINY:
        d = CF_TINY
    d = 1.0 / d
    h = d
    for m in range(1, CF_MAXIT + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if fabs(d) < CF_TINY:
            d = CF_TINY
        c = 1.0 + aa / c
        if fabs(c) < CF_TINY:
            c = CF_TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if fabs(d) < CF_TINY:
            d = CF_TINY
        c = 1.0 + aa / c
        if fabs(c) < CF_TINY:
            c = CF_TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if fabs(delta - 1.0) < CF_EPS:
            return h
    raise ArithmeticError(
        f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})"
    )


cdef double _betainc(double a, double b, double x) except? -1.0:
    cdef double front
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    front = exp(lgamma(a + b) - lgamma(a) - lgamma(b) + a * log(x) + b * log1p(-x))
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def betainc(double a, double b, double x):
    """Regularized incomplete beta I_x(a, b). Arguments are assumed valid."""
    return _betainc(a, b, x)


def betainc_array(double a, double b, x):
    arr = np.ascontiguousarray(x, dtype=np.float64)
    out = np.empty_like(arr)
    cdef double[::1] src = arr.reshape(-1)
    cdef double[::1] dst = out.reshape(-1)
    cdef Py_ssize_t i
    for i in range(src.shape[0]):
        dst[i] = _betainc(a, b, src[i])
    return out


cdef double _neumaier(const double[::1] v) noexcept nogil:
    cdef double total = 0.0
    cdef double comp = 0.0
    cdef double t, x
    cdef Py_ssize_t i
    for i in range(v.shape[0]):
        x = v[i]
        t = total + x
        if fabs(total) >= fabs(x):
            comp += (total - t) + x
        else:
            comp += (x - t) + total
        total = t
    return total + comp


def compensated_sum(values):
    """Left-to-right Neumaier summation."""
    cdef const double[::1] v = np.ascontiguousarray(values, dtype=np.float64).reshape(-1)
    return _neumaier(v)


def row_compensated_sums(matrix):
    arr = np.ascontiguousarray(matrix, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError("expected a 2-d array")
    cdef const double[:, ::1] m = arr
    out = np.empty(arr.shape[0], dtype=np.float64)
    cdef double[::1] dst = out
    cdef Py_ssize_t i
    for i in range(m.shape[0]):
        dst[i] = _neumaier(m[i])
    return out
