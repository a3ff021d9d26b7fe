# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops.  Signatures mirror ``projbank._pykernels``."""
import numpy as np
cimport numpy as cnp
from libc.stdint cimport uint64_t, int64_t, int8_t

cnp.import_array()

cdef extern from *:
    int __builtin_popcountll(unsigned long long) nogil


def hamming_distances(const uint64_t[:, ::1] queries, const uint64_t[:, ::1] gallery):
    cdef Py_ssize_t nq = queries.shape[0], ng = gallery.shape[0], nw = queries.shape[1]
    cdef Py_ssize_t a, b, w
    cdef int acc
    out = np.empty((nq, ng), dtype=np.int32)
    cdef int[:, ::1] o = out
    with nogil:
        for a in range(nq):
            for b in range(ng):
                acc = 0
                for w in range(nw):
                    acc += __builtin_popcountll(queries[a, w] ^ gallery[b, w])
                o[a, b] = acc
    return out


def linear_hinge(const double[:, ::1] x, const double[::1] w,
                 const int64_t[::1] ii, const int64_t[::1] jj, const int8_t[::1] lab,
                 bint need_grad=True):
    cdef Py_ssize_t m = x.shape[1], npairs = ii.shape[0]
    cdef Py_ssize_t t, c
    cdef int64_t i, j
    cdef double pi, pj, margin, s, total = 0.0
    cdef Py_ssize_t n_zero = 0
    grad = np.zeros(m, dtype=np.float64)
    cdef double[::1] g = grad
    with nogil:
        for t in range(npairs):
            i = ii[t]
            j = jj[t]
            pi = 0.0
            pj = 0.0
            for c in range(m):
                pi = pi + x[i, c] * w[c]
                pj = pj + x[j, c] * w[c]
            margin = 1.0 - lab[t] * pi * pj
            if margin > 0.0:
                total = total + margin
                if need_grad:
                    s = -lab[t]
                    for c in range(m):
                        g[c] = g[c] + s * (x[i, c] * pj + x[j, c] * pi)
            elif margin == 0.0:
                n_zero += 1
    return total, grad, n_zero


def kernel_hinge(const double[::1] g, const int64_t[::1] ii, const int64_t[::1] jj,
                 const int8_t[::1] lab):
    cdef Py_ssize_t npairs = ii.shape[0], t
    cdef int64_t i, j
    cdef double margin, total = 0.0
    cdef Py_ssize_t n_zero = 0
    coeff = np.zeros(g.shape[0], dtype=np.float64)
    cdef double[::1] cf = coeff
    with nogil:
        for t in range(npairs):
            i = ii[t]
            j = jj[t]
            margin = 1.0 - lab[t] * g[i] * g[j]
            if margin > 0.0:
                total = total + margin
                cf[i] = cf[i] - lab[t] * g[j]
                cf[j] = cf[j] - lab[t] * g[i]
            elif margin == 0.0:
                n_zero += 1
    return total, coeff, n_zero


def segment_dot(const double[:, ::1] x, const int64_t[::1] dims, const int64_t[::1] offsets,
                const double[::1] weights):
    cdef Py_ssize_t n = x.shape[0], d = offsets.shape[0] - 1
    cdef Py_ssize_t r, p, t
    cdef double acc
    out = np.empty((n, d), dtype=np.float64)
    cdef double[:, ::1] o = out
    with nogil:
        for r in range(n):
            for p in range(d):
                acc = 0.0
                for t in range(offsets[p], offsets[p + 1]):
                    acc = acc + x[r, dims[t]] * weights[t]
                o[r, p] = acc
    return out
