# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels. Same signatures and results as ``_kernels_py``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, sqrt, round as cround, pow, INFINITY

cnp.import_array()


def offset_profile(rows2, cols2, absm):
    cdef const cnp.int64_t[:, ::1] r = np.ascontiguousarray(rows2, dtype=np.int64)
    cdef const cnp.int64_t[:, ::1] c = np.ascontiguousarray(cols2, dtype=np.int64)
    cdef const double[:, ::1] a = np.ascontiguousarray(absm, dtype=np.float64)
    cdef Py_ssize_t n = r.shape[0], m = c.shape[0], d = r.shape[1]
    cdef Py_ssize_t i, j, k, idx, total
    cdef cnp.int64_t o
    if n == 0 or m == 0:
        return np.zeros((0, d), dtype=np.int64), np.zeros(0)
    lo_arr = np.empty(d, dtype=np.int64)
    span_arr = np.empty(d, dtype=np.int64)
    cdef cnp.int64_t[::1] lo = lo_arr
    cdef cnp.int64_t[::1] span = span_arr
    cdef cnp.int64_t rmin, rmax, cmin, cmax
    for k in range(d):
        rmin = rmax = r[0, k]
        for i in range(n):
            if r[i, k] < rmin:
                rmin = r[i, k]
            if r[i, k] > rmax:
                rmax = r[i, k]
        cmin = cmax = c[0, k]
        for j in range(m):
            if c[j, k] < cmin:
                cmin = c[j, k]
            if c[j, k] > cmax:
                cmax = c[j, k]
        lo[k] = rmin - cmax
        span[k] = (rmax - cmin) - lo[k] + 1
    total = 1
    for k in range(d):
        total *= span[k]
    acc_arr = np.full(total, -1.0)
    cdef double[::1] acc = acc_arr
    cdef double v
    for i in range(n):
        for j in range(m):
            idx = 0
            for k in range(d):
                o = r[i, k] - c[j, k]
                idx = idx * span[k] + (o - lo[k])
            v = a[i, j]
            if v > acc[idx]:
                acc[idx] = v
    hit = np.nonzero(acc_arr >= 0)[0]
    keys = np.empty((hit.size, d), dtype=np.int64)
    rem = hit.copy()
    for k in range(d - 1, -1, -1):
        keys[:, k] = rem % span_arr[k] + lo_arr[k]
        rem //= span_arr[k]
    return keys, acc_arr[hit]


cdef inline double _tnorm(double re, double im) nogil:
    cdef double x = re - cround(re)
    return sqrt(x * x + im * im)


def pair_ratio_extrema(z, vz, double h, chunk=None):
    cdef const double complex[::1] zz = np.ascontiguousarray(z, dtype=np.complex128)
    cdef const double complex[::1] vv = np.ascontiguousarray(vz, dtype=np.complex128)
    cdef Py_ssize_t n = zz.shape[0], i, j
    cdef double lo = INFINITY, hi = -INFINITY, ra, rb, q
    cdef double complex dz, sz, dv
    with nogil:
        for i in range(n):
            for j in range(n):
                dz = zz[i] - zz[j]
                ra = _tnorm(dz.real, dz.imag)
                if ra < h:
                    continue
                sz = zz[i] + zz[j]
                rb = _tnorm(sz.real, sz.imag)
                if rb < h:
                    continue
                dv = vv[i] - vv[j]
                q = sqrt(dv.real * dv.real + dv.imag * dv.imag) / (ra * rb)
                if q < lo:
                    lo = q
                if q > hi:
                    hi = q
    return lo, hi


cdef inline bint _lex_less(cnp.int64_t[::1] a, cnp.int64_t[::1] b, Py_ssize_t d) nogil:
    cdef Py_ssize_t k
    for k in range(d):
        if a[k] != b[k]:
            return a[k] < b[k]
    return False


def diophantine_scan(omega, double tau, double gamma, long n_max):
    cdef const double[::1] w = np.ascontiguousarray(omega, dtype=np.float64)
    cdef Py_ssize_t d = w.shape[0], k, p
    cdef long r, first, lo, hi
    cdef int sgn, si
    cdef double x, dist, g, gmin = INFINITY, rt
    cdef bint found = False, shell_hit
    vec_arr = np.zeros(d, dtype=np.int64)
    best_arr = np.zeros(d, dtype=np.int64)
    cdef cnp.int64_t[::1] vec = vec_arr
    cdef cnp.int64_t[::1] best = best_arr
    witness = None
    if d == 1:
        # only n = r has a positive first coordinate in the shell of radius r
        for r in range(1, n_max + 1):
            x = r * w[0]
            g = fabs(x - cround(x)) * pow(<double>r, tau)
            if g < gmin:
                gmin = g
            if not found and g < gamma:
                found = True
                witness = (int(r),)
        return witness, gmin
    for r in range(1, n_max + 1):
        rt = pow(<double>r, tau)
        shell_hit = False
        # first coordinate of modulus r sits at position p
        for p in range(d):
            for si in range(2):
                sgn = 1 - 2 * si
                for k in range(d):
                    if k < p:
                        vec[k] = -(r - 1)
                    elif k == p:
                        vec[k] = sgn * r
                    else:
                        vec[k] = -r
                while True:
                    first = 0
                    for k in range(d):
                        if vec[k] != 0:
                            first = vec[k]
                            break
                    if first > 0:
                        x = 0.0
                        for k in range(d):
                            x += vec[k] * w[k]
                        dist = fabs(x - cround(x))
                        g = dist * rt
                        if g < gmin:
                            gmin = g
                        if not found and g < gamma:
                            if not shell_hit or _lex_less(vec, best, d):
                                best[:] = vec
                            shell_hit = True
                    # odometer over the coordinates other than p
                    k = d - 1
                    while k >= 0:
                        if k == p:
                            k -= 1
                            continue
                        hi = r - 1 if k < p else r
                        if vec[k] < hi:
                            vec[k] += 1
                            break
                        vec[k] = -hi
                        k -= 1
                    if k < 0:
                        break
        if shell_hit and not found:
            found = True
            witness = tuple(int(best[k]) for k in range(d))
    return witness, gmin
