# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernel sums; same contracts as ``_kernels_py``.

Sources are copied into separate coordinate arrays so the inner loops
vectorize; ``x**(-a)`` is evaluated as ``exp(-a log x)``.
"""
import numpy as np
cimport numpy as cnp
from cython.parallel cimport prange, parallel
from libc.stdlib cimport malloc, free
from libc.math cimport exp, log

# finite sentinel: the module is built with -ffast-math
DEF BIG = 1e300

cnp.import_array()

cdef int _threads = 1


def set_num_threads(int n):
    global _threads
    _threads = n if n > 0 else 1


def get_num_threads():
    return _threads


cdef inline void _accumulate(const double* sx, const double* sy, const double* sdx, const double* sdy,
                             double tx, double ty, double b2, double alpha, Py_ssize_t lo, Py_ssize_t hi,
                             double* acc) noexcept nogil:
    # acc = [wsum, ax, ay, min_r2]
    cdef Py_ssize_t p
    cdef double dx, dy, r2, w
    cdef double wsum = 0.0, ax = 0.0, ay = 0.0, mn = acc[3]
    for p in range(lo, hi):
        dx = tx - sx[p]
        dy = ty - sy[p]
        r2 = dx * dx + dy * dy
        mn = r2 if r2 < mn else mn
        w = exp(-alpha * log(r2 + b2))
        wsum = wsum + w
        ax = ax + w * sdx[p]
        ay = ay + w * sdy[p]
    acc[0] += wsum
    acc[1] += ax
    acc[2] += ay
    acc[3] = mn


cdef _columns(a):
    a = np.asarray(a, dtype=np.float64)
    return np.ascontiguousarray(a[:, 0]), np.ascontiguousarray(a[:, 1])


def pair_sum(tz, tdz, sz, sdz, double alpha, double beta, double weight, long skip_stride):
    cdef const double[:, ::1] t = np.ascontiguousarray(tz, dtype=np.float64)
    cdef const double[:, ::1] td = np.ascontiguousarray(tdz, dtype=np.float64)
    sx_a, sy_a = _columns(sz)
    sdx_a, sdy_a = _columns(sdz)
    cdef const double[::1] sx = sx_a, sy = sy_a, sdx = sdx_a, sdy = sdy_a
    cdef Py_ssize_t nt = t.shape[0], ns = sx.shape[0]
    out_arr = np.empty((nt, 2))
    mins_arr = np.full(nt, BIG)
    cdef double[:, ::1] out = out_arr
    cdef double[::1] mins = mins_arr
    cdef double b2 = beta * beta
    cdef Py_ssize_t j, skip
    cdef double* acc
    if ns == 0:
        out_arr[:] = 0.0
        return out_arr, float('inf')
    with nogil, parallel(num_threads=_threads):
        acc = <double*> malloc(4 * sizeof(double))
        for j in prange(nt, schedule="static"):
            acc[0] = 0.0
            acc[1] = 0.0
            acc[2] = 0.0
            acc[3] = BIG
            if skip_stride > 0:
                skip = j * skip_stride
                _accumulate(&sx[0], &sy[0], &sdx[0], &sdy[0], t[j, 0], t[j, 1], b2, alpha, 0, skip, acc)
                _accumulate(&sx[0], &sy[0], &sdx[0], &sdy[0], t[j, 0], t[j, 1], b2, alpha, skip + 1, ns, acc)
            else:
                _accumulate(&sx[0], &sy[0], &sdx[0], &sdy[0], t[j, 0], t[j, 1], b2, alpha, 0, ns, acc)
            out[j, 0] = weight * (td[j, 0] * acc[0] - acc[1])
            out[j, 1] = weight * (td[j, 1] * acc[0] - acc[2])
            mins[j] = acc[3]
        free(acc)
    mn = float(mins_arr.min()) if nt else BIG
    return out_arr, (float('inf') if mn >= BIG else mn)


def boundary_sum(x, sz, sdz, double alpha, double beta, double weight):
    cdef const double[:, ::1] t = np.ascontiguousarray(x, dtype=np.float64)
    sx_a, sy_a = _columns(sz)
    sdx_a, sdy_a = _columns(sdz)
    cdef const double[::1] sx = sx_a, sy = sy_a, sdx = sdx_a, sdy = sdy_a
    cdef Py_ssize_t nt = t.shape[0], ns = sx.shape[0]
    out_arr = np.empty((nt, 2))
    cdef double[:, ::1] out = out_arr
    cdef double b2 = beta * beta
    cdef Py_ssize_t i, p
    cdef double dx, dy, w, ax, ay, tx, ty
    for i in prange(nt, nogil=True, num_threads=_threads, schedule="static"):
        ax = 0.0
        ay = 0.0
        tx = t[i, 0]
        ty = t[i, 1]
        for p in range(ns):
            dx = tx - sx[p]
            dy = ty - sy[p]
            w = exp(-alpha * log(dx * dx + dy * dy + b2))
            ax = ax + w * sdx[p]
            ay = ay + w * sdy[p]
        out[i, 0] = weight * ax
        out[i, 1] = weight * ay
    return out_arr


def boundary_grad_sum(x, sz, sdz, double alpha, double beta, double weight):
    cdef const double[:, ::1] t = np.ascontiguousarray(x, dtype=np.float64)
    sx_a, sy_a = _columns(sz)
    sdx_a, sdy_a = _columns(sdz)
    cdef const double[::1] sx = sx_a, sy = sy_a, sdx = sdx_a, sdy = sdy_a
    cdef Py_ssize_t nt = t.shape[0], ns = sx.shape[0]
    out_arr = np.empty((nt, 2, 2))
    cdef double[:, :, ::1] out = out_arr
    cdef double b2 = beta * beta
    cdef Py_ssize_t i, p
    cdef double dx, dy, w, g00, g01, g10, g11, tx, ty
    for i in prange(nt, nogil=True, num_threads=_threads, schedule="static"):
        g00 = 0.0
        g01 = 0.0
        g10 = 0.0
        g11 = 0.0
        tx = t[i, 0]
        ty = t[i, 1]
        for p in range(ns):
            dx = tx - sx[p]
            dy = ty - sy[p]
            w = exp((-alpha - 1.0) * log(dx * dx + dy * dy + b2))
            g00 = g00 + w * dx * sdx[p]
            g01 = g01 + w * dy * sdx[p]
            g10 = g10 + w * dx * sdy[p]
            g11 = g11 + w * dy * sdy[p]
        out[i, 0, 0] = weight * g00
        out[i, 0, 1] = weight * g01
        out[i, 1, 0] = weight * g10
        out[i, 1, 1] = weight * g11
    return out_arr


def chord_arc_sup(z):
    """max over pairs (j, j - l), l = 1..M/2, of (l h) / |z_j - z_(j-l)|; inf on coincident samples."""
    zx_a, zy_a = _columns(z)
    cdef const double[::1] zx = zx_a, zy = zy_a
    cdef Py_ssize_t M = zx.shape[0], l, j, q
    cdef double h = 2.0 * 3.141592653589793 / M
    cdef double best = 0.0, dx, dy, d2, r, lb
    for l in range(1, M // 2 + 1):
        lb = 0.0
        for j in range(M):
            q = j - l
            if q < 0:
                q = q + M
            dx = zx[j] - zx[q]
            dy = zy[j] - zy[q]
            d2 = dx * dx + dy * dy
            if d2 == 0.0:
                return float('inf')
            r = 1.0 / d2
            lb = r if r > lb else lb
        # max of (l h)^2 / d^2 over this separation
        r = (l * h) * (l * h) * lb
        best = r if r > best else best
    return best ** 0.5
