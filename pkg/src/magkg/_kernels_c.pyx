# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Fused pointwise loops for the magnetic operator and weighted norms.

Every routine works on C-contiguous arrays whose spatial part is (n, n, n).
Complex arrays are viewed as interleaved (re, im) doubles so the loops use
plain real arithmetic; C99 complex products carry inf/nan recovery branches
that block vectorisation.  Results are written into a caller-supplied
buffer; batch handling lives in ``magkg.kernels``.
"""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def weighted_sqsum(const double[::1] v, const double[::1] w=None):
    """``v`` is an interleaved complex block of length 2N."""
    cdef Py_ssize_t i, N = v.shape[0] // 2
    cdef double acc = 0.0, re, im, ww
    if w is None:
        for i in range(2 * N):
            acc += v[i] * v[i]
    else:
        for i in range(N):
            re = v[2 * i]
            im = v[2 * i + 1]
            ww = w[i]
            acc += ww * ww * (re * re + im * im)
    return acc


def momentum(const double[::1] g, const double[::1] a, const double[::1] f,
             double[::1] o):
    cdef Py_ssize_t i, N = a.shape[0]
    cdef double ai
    for i in range(N):
        ai = a[i]
        o[2 * i] = g[2 * i] + ai * f[2 * i]
        o[2 * i + 1] = g[2 * i + 1] + ai * f[2 * i + 1]


def contract(const double[::1] base, const double[::1] u0, const double[::1] u1,
             const double[::1] u2, const double[::1] a0, const double[::1] a1,
             const double[::1] a2, const double[::1] pot, const double[::1] f,
             double[::1] o):
    cdef Py_ssize_t i, r, N = a0.shape[0]
    cdef double b0, b1, b2
    if pot is None:
        for i in range(N):
            b0 = a0[i]
            b1 = a1[i]
            b2 = a2[i]
            r = 2 * i
            o[r] = base[r] + b0 * u0[r] + b1 * u1[r] + b2 * u2[r]
            o[r + 1] = base[r + 1] + b0 * u0[r + 1] + b1 * u1[r + 1] + b2 * u2[r + 1]
    else:
        for i in range(N):
            b0 = a0[i]
            b1 = a1[i]
            b2 = a2[i]
            r = 2 * i
            o[r] = base[r] + b0 * u0[r] + b1 * u1[r] + b2 * u2[r] + pot[i] * f[r]
            o[r + 1] = (base[r + 1] + b0 * u0[r + 1] + b1 * u1[r + 1] + b2 * u2[r + 1]
                        + pot[i] * f[r + 1])


def dilation(const double[:, :, ::1] gx, const double[:, :, ::1] gy,
             const double[:, :, ::1] gz, const double[::1] x, const double[::1] y,
             const double[::1] z, const double[:, :, ::1] f, double[:, :, ::1] o):
    """Spatial blocks of shape (n0, n1, 2 n2) in interleaved layout."""
    cdef Py_ssize_t i, j, k, n0 = f.shape[0], n1 = f.shape[1], n2 = f.shape[2] // 2
    cdef double xi, yj, zk
    for i in range(n0):
        xi = 2.0 * x[i]
        for j in range(n1):
            yj = 2.0 * y[j]
            for k in range(n2):
                zk = 2.0 * z[k]
                o[i, j, 2 * k] = (xi * gx[i, j, 2 * k] + yj * gy[i, j, 2 * k]
                                  + zk * gz[i, j, 2 * k] + 3.0 * f[i, j, 2 * k])
                o[i, j, 2 * k + 1] = (xi * gx[i, j, 2 * k + 1] + yj * gy[i, j, 2 * k + 1]
                                      + zk * gz[i, j, 2 * k + 1] + 3.0 * f[i, j, 2 * k + 1])
