# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops. Signatures mirror :mod:`catmaxent._kernels_py`."""

import numpy as np
cimport numpy as cnp
from libc.math cimport log

cnp.import_array()


def inclusion_exclusion(double[:, ::1] cum, const long long[::1] order,
                        const long long[::1] desc_ptr, const long long[::1] desc_idx):
    cdef Py_ssize_t n = cum.shape[0], k = cum.shape[1]
    out_arr = np.empty((n, k), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, b, d, j, p
    with nogil:
        for i in range(n):
            b = order[i]
            for j in range(k):
                out[b, j] = cum[b, j]
            for p in range(desc_ptr[b], desc_ptr[b + 1]):
                d = desc_idx[p]
                for j in range(k):
                    out[b, j] -= out[d, j]
    return out_arr


def constraint_sums(const double[::1] weights, const long long[::1] mem_ptr,
                    const long long[::1] mem_idx):
    cdef Py_ssize_t C = mem_ptr.shape[0] - 1
    out_arr = np.zeros(C, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t c, p
    cdef double s
    with nogil:
        for c in range(C):
            s = 0.0
            for p in range(mem_ptr[c], mem_ptr[c + 1]):
                s += weights[mem_idx[p]]
            out[c] = s
    return out_arr


def scaling_sweep(double[::1] weights, double[::1] log_u, const double[::1] targets,
                  const long long[::1] mem_ptr, const long long[::1] mem_idx):
    """One pass of two-state scaling over every constraint, in place.

    Returns -1, or the index of the first constraint with zero mass.
    On return ``weights`` sums to one.
    """
    cdef Py_ssize_t n = weights.shape[0], C = mem_ptr.shape[0] - 1
    cdef Py_ssize_t c, p, b
    cdef double total = 0.0, s, t, r
    cdef long long bad = -1
    with nogil:
        for b in range(n):
            total += weights[b]
        for c in range(C):
            s = 0.0
            for p in range(mem_ptr[c], mem_ptr[c + 1]):
                s += weights[mem_idx[p]]
            if s <= 0.0:
                bad = c
                break
            s = s / total
            t = targets[c]
            if s >= 1.0:
                bad = c
                break
            r = (t * (1.0 - s)) / (s * (1.0 - t))
            for p in range(mem_ptr[c], mem_ptr[c + 1]):
                weights[mem_idx[p]] *= r
            log_u[c] += log(r)
            total = total * (1.0 - s + r * s)
        for b in range(n):
            weights[b] /= total
    return bad


def match_patterns(const int[:, ::1] rows, const long long[::1] pat_ptr,
                   const long long[::1] pat_attr, const long long[::1] pat_val):
    cdef Py_ssize_t n = rows.shape[0], P = pat_ptr.shape[0] - 1
    out_arr = np.ones((n, P), dtype=np.uint8)
    cdef unsigned char[:, ::1] out = out_arr
    cdef Py_ssize_t i, c, p, a
    cdef int v
    with nogil:
        # branchless: AND one attribute test at a time into the column
        for c in range(P):
            for p in range(pat_ptr[c], pat_ptr[c + 1]):
                a = pat_attr[p]
                v = <int>pat_val[p]
                for i in range(n):
                    out[i, c] &= rows[i, a] == v
    return out_arr
