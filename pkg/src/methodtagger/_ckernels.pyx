# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled linear-chain kernels (forward, backward, pairwise marginals, Viterbi).

Mirrors ``_pykernels`` exactly; inputs are C-contiguous float64 arrays and
transition entries may be -inf.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, INFINITY

cnp.import_array()


cdef inline double _lse_update(double m, double s) nogil:
    if m == -INFINITY:
        return -INFINITY
    return m + log(s)


def forward(const double[:, ::1] em, const double[:, ::1] trans,
            const double[::1] start, const double[::1] stop):
    cdef Py_ssize_t n = em.shape[0], k = em.shape[1]
    cdef Py_ssize_t i, a, b
    cdef double m, s, v
    alpha_np = np.empty((n, k), dtype=np.float64)
    cdef double[:, ::1] alpha = alpha_np
    with nogil:
        for b in range(k):
            alpha[0, b] = start[b] + em[0, b]
        for i in range(1, n):
            for b in range(k):
                m = -INFINITY
                for a in range(k):
                    v = alpha[i - 1, a] + trans[a, b]
                    if v > m:
                        m = v
                s = 0.0
                if m != -INFINITY:
                    for a in range(k):
                        s += exp(alpha[i - 1, a] + trans[a, b] - m)
                alpha[i, b] = _lse_update(m, s) + em[i, b]
        m = -INFINITY
        for b in range(k):
            v = alpha[n - 1, b] + stop[b]
            if v > m:
                m = v
        s = 0.0
        if m != -INFINITY:
            for b in range(k):
                s += exp(alpha[n - 1, b] + stop[b] - m)
        v = _lse_update(m, s)
    return alpha_np, float(v)


def backward(const double[:, ::1] em, const double[:, ::1] trans,
             const double[::1] stop):
    cdef Py_ssize_t n = em.shape[0], k = em.shape[1]
    cdef Py_ssize_t i, a, b
    cdef double m, s, v
    beta_np = np.empty((n, k), dtype=np.float64)
    cdef double[:, ::1] beta = beta_np
    with nogil:
        for a in range(k):
            beta[n - 1, a] = stop[a]
        for i in range(n - 2, -1, -1):
            for a in range(k):
                m = -INFINITY
                for b in range(k):
                    v = trans[a, b] + em[i + 1, b] + beta[i + 1, b]
                    if v > m:
                        m = v
                s = 0.0
                if m != -INFINITY:
                    for b in range(k):
                        s += exp(trans[a, b] + em[i + 1, b] + beta[i + 1, b] - m)
                beta[i, a] = _lse_update(m, s)
    return beta_np


def pair_marginals(const double[:, ::1] alpha, const double[:, ::1] beta,
                   const double[:, ::1] em, const double[:, ::1] trans,
                   double log_z):
    cdef Py_ssize_t n = em.shape[0], k = em.shape[1]
    cdef Py_ssize_t i, a, b
    cdef double v
    out_np = np.zeros((k, k), dtype=np.float64)
    cdef double[:, ::1] out = out_np
    with nogil:
        for i in range(1, n):
            for a in range(k):
                if alpha[i - 1, a] == -INFINITY:
                    continue
                for b in range(k):
                    v = alpha[i - 1, a] + trans[a, b] + em[i, b] + beta[i, b]
                    if v == -INFINITY:
                        continue
                    out[a, b] += exp(v - log_z)
    return out_np


def viterbi(const double[:, ::1] em, const double[:, ::1] trans,
            const double[::1] start, const double[::1] stop):
    cdef Py_ssize_t n = em.shape[0], k = em.shape[1]
    cdef Py_ssize_t i, a, b, arg
    cdef double m, v
    back_np = np.zeros((n, k), dtype=np.int64)
    score_np = np.empty(k, dtype=np.float64)
    nxt_np = np.empty(k, dtype=np.float64)
    path_np = np.empty(n, dtype=np.int64)
    cdef cnp.int64_t[:, ::1] back = back_np
    cdef double[::1] score = score_np
    cdef double[::1] nxt = nxt_np
    cdef cnp.int64_t[::1] path = path_np
    with nogil:
        for b in range(k):
            score[b] = start[b] + em[0, b]
        for i in range(1, n):
            for b in range(k):
                # strict '>' keeps the lowest previous label on ties
                arg = 0
                m = score[0] + trans[0, b]
                for a in range(1, k):
                    v = score[a] + trans[a, b]
                    if v > m:
                        m = v
                        arg = a
                back[i, b] = arg
                nxt[b] = m + em[i, b]
            for b in range(k):
                score[b] = nxt[b]
        arg = 0
        m = score[0] + stop[0]
        for b in range(1, k):
            v = score[b] + stop[b]
            if v > m:
                m = v
                arg = b
        path[n - 1] = arg
        for i in range(n - 1, 0, -1):
            path[i - 1] = back[i, path[i]]
    return path_np, float(m)
