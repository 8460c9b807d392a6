# cython: boundscheck=False, wraparound=False, cdivision=True
"""Fused pointwise kernels for the time-stepping hot path.

Same contracts as sbpsim._core_py; selected at import by sbpsim.backend.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport cbrt, cos, sin, sqrt

cnp.import_array()


def nonlinear_phase(cnp.complex128_t[::1] u, const double[::1] conv,
                    double dt, double coeff, int dim):
    """In place: u *= exp(-i*dt*coeff*(conv - |u|**(2/dim)))."""
    cdef Py_ssize_t i, n = u.shape[0]
    cdef double a, pot, ph, c, s, re, im
    if conv.shape[0] != n:
        raise ValueError("shape mismatch")
    if dim == 2:
        for i in range(n):
            re = u[i].real
            im = u[i].imag
            a = re * re + im * im
            pot = coeff * (conv[i] - sqrt(a))
            ph = -dt * pot
            c = cos(ph)
            s = sin(ph)
            u[i].real = re * c - im * s
            u[i].imag = re * s + im * c
    elif dim == 3:
        for i in range(n):
            re = u[i].real
            im = u[i].imag
            a = re * re + im * im
            pot = coeff * (conv[i] - cbrt(a))
            ph = -dt * pot
            c = cos(ph)
            s = sin(ph)
            u[i].real = re * c - im * s
            u[i].imag = re * s + im * c
    else:
        raise ValueError("dim must be 2 or 3")


def abs2(const cnp.complex128_t[::1] u, double[::1] out):
    """out = |u|**2 elementwise."""
    cdef Py_ssize_t i, n = u.shape[0]
    cdef double re, im
    if out.shape[0] != n:
        raise ValueError("shape mismatch")
    for i in range(n):
        re = u[i].real
        im = u[i].imag
        out[i] = re * re + im * im


def max_abs(const cnp.complex128_t[::1] u):
    """max_i |u_i| in one pass (tracks |.|^2, one sqrt at the end)."""
    cdef Py_ssize_t i, n = u.shape[0]
    cdef double best = 0.0, a, re, im
    for i in range(n):
        re = u[i].real
        im = u[i].imag
        a = re * re + im * im
        if a > best:
            best = a
    return sqrt(best)
