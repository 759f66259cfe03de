# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled ragged sums over arithmetic progressions.

For each row ``i`` the progression is ``t_u = base[i] + u * step[i]`` with
``u = 0 .. count[i] - 1``.  Columns of the result are

    0  sum log t          3  sum 1/t**2
    1  sum 1/t            4  sum u/t**2
    2  sum u/t            5  sum (u/t)**2

Summation runs in increasing ``u`` so results are reproducible.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport log

cnp.import_array()


def ragged_sums(const double[::1] base, const double[::1] step, const long[::1] count, int order=2):
    cdef Py_ssize_t n = base.shape[0]
    cdef Py_ssize_t i
    cdef long u, k
    cdef double t, inv, uinv, s0, s1, s2, s3, s4, s5, b, d
    ncol = 1 if order == 0 else 6
    out_arr = np.zeros((n, ncol), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    for i in range(n):
        b = base[i]
        d = step[i]
        k = count[i]
        s0 = 0.0
        if order == 0:
            for u in range(k):
                s0 += log(b + u * d)
            out[i, 0] = s0
            continue
        s1 = 0.0
        s2 = 0.0
        s3 = 0.0
        s4 = 0.0
        s5 = 0.0
        for u in range(k):
            t = b + u * d
            s0 += log(t)
            inv = 1.0 / t
            uinv = u * inv
            s1 += inv
            s2 += uinv
            s3 += inv * inv
            s4 += uinv * inv
            s5 += uinv * uinv
        out[i, 0] = s0
        out[i, 1] = s1
        out[i, 2] = s2
        out[i, 3] = s3
        out[i, 4] = s4
        out[i, 5] = s5
    return out_arr
