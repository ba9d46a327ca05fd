# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the kernels in ``_pykernels``; same contracts."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()


def pairwise_sq_distances(A, G):
    cdef const double[:, ::1] a = np.ascontiguousarray(A, dtype=np.float64)
    cdef const double[:, ::1] g = np.ascontiguousarray(G, dtype=np.float64)
    cdef Py_ssize_t n_a = a.shape[0], n_g = g.shape[0], d = a.shape[1]
    out_arr = np.empty((n_a, n_g), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j, k
    cdef double acc, t
    with nogil:
        for i in range(n_a):
            for j in range(n_g):
                acc = 0.0
                for k in range(d):
                    t = a[i, k] - g[j, k]
                    acc = acc + t * t
                out[i, j] = acc
    return out_arr


def pairwise_distances(A, G):
    out_arr = pairwise_sq_distances(A, G)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    with nogil:
        for i in range(out.shape[0]):
            for j in range(out.shape[1]):
                out[i, j] = sqrt(out[i, j])
    return out_arr


def ap_cmc(dist, q_pids, q_cams, g_pids, g_cams):
    cdef cnp.int64_t[:, ::1] order = np.ascontiguousarray(
        np.argsort(np.asarray(dist, dtype=np.float64), axis=1, kind="stable"), dtype=np.int64)
    cdef const cnp.int64_t[::1] qp = np.ascontiguousarray(q_pids, dtype=np.int64)
    cdef const cnp.int64_t[::1] qc = np.ascontiguousarray(q_cams, dtype=np.int64)
    cdef const cnp.int64_t[::1] gp = np.ascontiguousarray(g_pids, dtype=np.int64)
    cdef const cnp.int64_t[::1] gc = np.ascontiguousarray(g_cams, dtype=np.int64)
    cdef Py_ssize_t n_q = order.shape[0], n_g = order.shape[1]
    ap_arr = np.zeros(n_q, dtype=np.float64)
    first_arr = np.full(n_q, -1, dtype=np.int64)
    npos_arr = np.zeros(n_q, dtype=np.int64)
    cdef double[::1] ap = ap_arr
    cdef cnp.int64_t[::1] first_hit = first_arr
    cdef cnp.int64_t[::1] n_pos = npos_arr
    cdef Py_ssize_t i, j, idx, rank, hits
    cdef double acc
    with nogil:
        for i in range(n_q):
            rank = 0
            hits = 0
            acc = 0.0
            for j in range(n_g):
                idx = order[i, j]
                if gp[idx] == qp[i]:
                    if gc[idx] == qc[i]:
                        continue
                    hits = hits + 1
                    if hits == 1:
                        first_hit[i] = rank
                    acc = acc + (<double>hits) / (rank + 1)
                rank = rank + 1
            if hits > 0:
                n_pos[i] = hits
                ap[i] = acc / hits
    return ap_arr, first_arr, npos_arr


def kmeans_assign(X, centers):
    cdef const double[:, ::1] x = np.ascontiguousarray(X, dtype=np.float64)
    cdef const double[:, ::1] c = np.ascontiguousarray(centers, dtype=np.float64)
    cdef Py_ssize_t n = x.shape[0], m = c.shape[0], d = x.shape[1]
    labels_arr = np.zeros(n, dtype=np.int64)
    best_arr = np.zeros(n, dtype=np.float64)
    cdef cnp.int64_t[::1] labels = labels_arr
    cdef double[::1] best = best_arr
    cdef Py_ssize_t i, j, k
    cdef double acc, t
    with nogil:
        for i in range(n):
            for j in range(m):
                acc = 0.0
                for k in range(d):
                    t = x[i, k] - c[j, k]
                    acc = acc + t * t
                if j == 0 or acc < best[i]:
                    best[i] = acc
                    labels[i] = j
    return labels_arr, best_arr
