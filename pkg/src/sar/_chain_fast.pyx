# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled chain inference kernels: forward-backward marginals and Viterbi.

Log-domain throughout; -inf entries mean "forbidden" and flow through the
recursions as zeros in probability space. Mirrors sar._chain_numpy exactly.
"""

from libc.math cimport exp, log, INFINITY

import numpy as np


cdef inline double _logsumexp_row(double[::1] row, Py_ssize_t n) noexcept:
    cdef double m = -INFINITY
    cdef double s = 0.0
    cdef Py_ssize_t i
    for i in range(n):
        if row[i] > m:
            m = row[i]
    if m == -INFINITY:
        return -INFINITY
    for i in range(n):
        s += exp(row[i] - m)
    return m + log(s)


def log_partition(node, edge):
    cdef const double[:, ::1] nv = np.ascontiguousarray(node, dtype=np.float64)
    cdef const double[:, :, ::1] ev = np.ascontiguousarray(edge, dtype=np.float64)
    alpha = np.empty_like(np.asarray(nv))
    cdef double[:, ::1] av = alpha
    _forward(nv, ev, av)
    cdef Py_ssize_t T = nv.shape[0], K = nv.shape[1]
    return float(_logsumexp_row(av[T - 1], K))


cdef void _forward(const double[:, ::1] node, const double[:, :, ::1] edge,
                   double[:, ::1] alpha) noexcept:
    cdef Py_ssize_t T = node.shape[0], K = node.shape[1]
    cdef Py_ssize_t t, y, yp
    cdef double m, s, v
    for y in range(K):
        alpha[0, y] = node[0, y]
    for t in range(1, T):
        for y in range(K):
            m = -INFINITY
            for yp in range(K):
                v = alpha[t - 1, yp] + edge[t - 1, yp, y]
                if v > m:
                    m = v
            if m == -INFINITY:
                alpha[t, y] = -INFINITY
                continue
            s = 0.0
            for yp in range(K):
                s += exp(alpha[t - 1, yp] + edge[t - 1, yp, y] - m)
            alpha[t, y] = node[t, y] + m + log(s)


cdef void _backward(const double[:, ::1] node, const double[:, :, ::1] edge,
                    double[:, ::1] beta) noexcept:
    cdef Py_ssize_t T = node.shape[0], K = node.shape[1]
    cdef Py_ssize_t t, y, yn
    cdef double m, s, v
    for y in range(K):
        beta[T - 1, y] = 0.0
    for t in range(T - 2, -1, -1):
        for y in range(K):
            m = -INFINITY
            for yn in range(K):
                v = edge[t, y, yn] + node[t + 1, yn] + beta[t + 1, yn]
                if v > m:
                    m = v
            if m == -INFINITY:
                beta[t, y] = -INFINITY
                continue
            s = 0.0
            for yn in range(K):
                s += exp(edge[t, y, yn] + node[t + 1, yn] + beta[t + 1, yn] - m)
            beta[t, y] = m + log(s)


def forward_backward(node, edge):
    """Node/edge posterior marginals plus log-partition, all in one sweep.

    Raises ValueError when no finite-score path exists.
    """
    node = np.ascontiguousarray(node, dtype=np.float64)
    edge = np.ascontiguousarray(edge, dtype=np.float64)
    cdef const double[:, ::1] nv = node
    cdef const double[:, :, ::1] ev = edge
    cdef Py_ssize_t T = nv.shape[0], K = nv.shape[1]

    alpha = np.empty((T, K), dtype=np.float64)
    beta = np.empty((T, K), dtype=np.float64)
    cdef double[:, ::1] av = alpha
    cdef double[:, ::1] bv = beta
    _forward(nv, ev, av)
    cdef double log_z = _logsumexp_row(av[T - 1], K)
    if not (log_z > -INFINITY and log_z < INFINITY):
        raise ValueError("impossible chain")
    _backward(nv, ev, bv)

    node_marg = np.empty((T, K), dtype=np.float64)
    edge_marg = np.empty((T - 1, K, K), dtype=np.float64)
    cdef double[:, ::1] nm = node_marg
    cdef double[:, :, ::1] em = edge_marg
    cdef Py_ssize_t t, y, yn
    for t in range(T):
        for y in range(K):
            nm[t, y] = exp(av[t, y] + bv[t, y] - log_z)
    for t in range(T - 1):
        for y in range(K):
            for yn in range(K):
                em[t, y, yn] = exp(
                    av[t, y] + ev[t, y, yn] + nv[t + 1, yn] + bv[t + 1, yn] - log_z
                )
    return node_marg, edge_marg, float(log_z)


def viterbi_path(node, edge):
    """Highest-scoring path; per-step ties resolve to the lowest label index."""
    node = np.ascontiguousarray(node, dtype=np.float64)
    edge = np.ascontiguousarray(edge, dtype=np.float64)
    cdef const double[:, ::1] nv = node
    cdef const double[:, :, ::1] ev = edge
    cdef Py_ssize_t T = nv.shape[0], K = nv.shape[1]

    backptr = np.zeros((T, K), dtype=np.int64)
    path = np.empty(T, dtype=np.int64)
    cdef long[:, ::1] bp = backptr
    cdef long[::1] pv = path
    score = np.empty(K, dtype=np.float64)
    prev = np.empty(K, dtype=np.float64)
    cdef double[::1] sv = score
    cdef double[::1] pr = prev
    cdef Py_ssize_t t, y, yp, best
    cdef double m, v

    for y in range(K):
        sv[y] = nv[0, y]
    for t in range(1, T):
        for y in range(K):
            pr[y] = sv[y]
        for y in range(K):
            m = -INFINITY
            best = 0
            for yp in range(K):
                v = pr[yp] + ev[t - 1, yp, y]
                if v > m:
                    m = v
                    best = yp
            sv[y] = nv[t, y] + m
            bp[t, y] = best

    m = -INFINITY
    best = 0
    for y in range(K):
        if sv[y] > m:
            m = sv[y]
            best = y
    if m == -INFINITY:
        raise ValueError("impossible chain")
    pv[T - 1] = best
    for t in range(T - 2, -1, -1):
        pv[t] = bp[t + 1, pv[t + 1]]
    return path
