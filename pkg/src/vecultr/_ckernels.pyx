# cython: language_level=3
"""Compiled segment kernels.

Every function takes ragged lists packed CSR-style: a flat array of items
plus ``offsets`` of length ``num_lists + 1``.  Signatures and results
match :mod:`vecultr._pykernels`.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, log2, INFINITY

cnp.import_array()

DEF LOG_VAR_MIN = -10.0
DEF LOG_VAR_MAX = 10.0


cdef inline double _clamp(double v) nogil:
    if v < LOG_VAR_MIN:
        return LOG_VAR_MIN
    if v > LOG_VAR_MAX:
        return LOG_VAR_MAX
    return v


def softmax_ce(const double[::1] scores, const double[::1] targets,
               const cnp.int64_t[::1] offsets):
    cdef Py_ssize_t q, i, lo, hi
    cdef Py_ssize_t nq = offsets.shape[0] - 1
    cdef double m, z, lse, tsum, loss
    out_loss = np.zeros(nq, dtype=np.float64)
    out_grad = np.zeros(scores.shape[0], dtype=np.float64)
    cdef double[::1] L = out_loss
    cdef double[::1] G = out_grad
    with nogil:
        for q in range(nq):
            lo = offsets[q]
            hi = offsets[q + 1]
            m = -INFINITY
            tsum = 0.0
            for i in range(lo, hi):
                if scores[i] > m:
                    m = scores[i]
                tsum = tsum + targets[i]
            if tsum == 0.0:
                continue
            z = 0.0
            for i in range(lo, hi):
                z = z + exp(scores[i] - m)
            lse = m + log(z)
            loss = 0.0
            for i in range(lo, hi):
                loss = loss - targets[i] * (scores[i] - lse)
                G[i] = tsum * exp(scores[i] - lse) - targets[i]
            L[q] = loss
    return out_loss, out_grad


def base_vectors(const double[:, ::1] mu, const double[:, ::1] log_var,
                 const cnp.int64_t[::1] offsets):
    cdef Py_ssize_t q, i, k, lo, hi
    cdef Py_ssize_t nq = offsets.shape[0] - 1
    cdef Py_ssize_t d = mu.shape[1]
    cdef double w, num, den
    out = np.zeros((nq, d), dtype=np.float64)
    cdef double[:, ::1] V = out
    with nogil:
        for q in range(nq):
            lo = offsets[q]
            hi = offsets[q + 1]
            for k in range(d):
                num = 0.0
                den = 0.0
                for i in range(lo, hi):
                    w = exp(-_clamp(log_var[i, k]))
                    num = num + w * mu[i, k]
                    den = den + w
                V[q, k] = num / den
    return out


cdef void _stable_desc(const double[::1] keys, Py_ssize_t lo, Py_ssize_t n,
                       cnp.int64_t[::1] idx) nogil:
    # insertion sort on local indices; equal keys keep index order
    cdef Py_ssize_t i, j
    cdef cnp.int64_t cur
    for i in range(n):
        idx[i] = i
    for i in range(1, n):
        cur = idx[i]
        j = i - 1
        while j >= 0 and keys[lo + idx[j]] < keys[lo + cur]:
            idx[j + 1] = idx[j]
            j -= 1
        idx[j + 1] = cur


def segment_argsort(const double[::1] scores, const cnp.int64_t[::1] offsets):
    cdef Py_ssize_t q, i, lo, hi
    cdef Py_ssize_t nq = offsets.shape[0] - 1
    out = np.empty(scores.shape[0], dtype=np.int64)
    cdef cnp.int64_t[::1] O = out
    with nogil:
        for q in range(nq):
            lo = offsets[q]
            hi = offsets[q + 1]
            _stable_desc(scores, lo, hi - lo, O[lo:hi])
    return out


def segment_ndcg(const double[::1] scores, const double[::1] labels,
                 const cnp.int64_t[::1] offsets, Py_ssize_t k):
    cdef Py_ssize_t q, i, lo, hi, n, top
    cdef Py_ssize_t nq = offsets.shape[0] - 1
    cdef double dcg, idcg
    out = np.zeros(nq, dtype=np.float64)
    cdef double[::1] R = out
    order_buf = np.empty(max(scores.shape[0], 1), dtype=np.int64)
    ideal_buf = np.empty(max(scores.shape[0], 1), dtype=np.int64)
    cdef cnp.int64_t[::1] order = order_buf
    cdef cnp.int64_t[::1] ideal = ideal_buf
    with nogil:
        for q in range(nq):
            lo = offsets[q]
            hi = offsets[q + 1]
            n = hi - lo
            top = k if k < n else n
            _stable_desc(scores, lo, n, order)
            _stable_desc(labels, lo, n, ideal)
            dcg = 0.0
            idcg = 0.0
            for i in range(top):
                dcg = dcg + (2.0 ** labels[lo + order[i]] - 1.0) / log2(i + 2.0)
                idcg = idcg + (2.0 ** labels[lo + ideal[i]] - 1.0) / log2(i + 2.0)
            if idcg == 0.0:
                R[q] = 1.0
            else:
                R[q] = dcg / idcg
    return out
