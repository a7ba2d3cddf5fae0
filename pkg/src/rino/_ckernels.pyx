# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops: graph Dijkstra and brute-force k-nearest neighbours.

Both mirror ``rino._kernels_py`` exactly (same tie rules, same outputs).
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport INFINITY, floor

cnp.import_array()


cdef inline void _sift_up(double[::1] key, long[::1] val, Py_ssize_t pos):
    cdef double k = key[pos]
    cdef long v = val[pos]
    cdef Py_ssize_t parent
    while pos > 0:
        parent = (pos - 1) >> 1
        if key[parent] <= k:
            break
        key[pos] = key[parent]
        val[pos] = val[parent]
        pos = parent
    key[pos] = k
    val[pos] = v


cdef inline void _sift_down(double[::1] key, long[::1] val, Py_ssize_t size):
    cdef Py_ssize_t pos = 0
    cdef Py_ssize_t child
    cdef double k = key[0]
    cdef long v = val[0]
    while True:
        child = 2 * pos + 1
        if child >= size:
            break
        if child + 1 < size and key[child + 1] < key[child]:
            child += 1
        if key[child] >= k:
            break
        key[pos] = key[child]
        val[pos] = val[child]
        pos = child
    key[pos] = k
    val[pos] = v


def dijkstra_many(const long[::1] indptr, const long[::1] indices,
                  const double[::1] weights, const long[::1] sources):
    """Shortest-path distances from every source; ``inf`` where unreachable."""
    cdef Py_ssize_t n = indptr.shape[0] - 1
    cdef Py_ssize_t ns = sources.shape[0]
    cdef Py_ssize_t cap = indices.shape[0] + n + 1
    out = np.full((ns, n), np.inf, dtype=np.float64)
    cdef double[:, ::1] dist = out
    cdef double[::1] hkey = np.empty(cap, dtype=np.float64)
    cdef long[::1] hval = np.empty(cap, dtype=np.int64)
    cdef char[::1] done = np.zeros(n, dtype=np.int8)
    cdef Py_ssize_t s, size, e, j
    cdef long u
    cdef double d, nd
    for s in range(ns):
        done[:] = 0
        dist[s, sources[s]] = 0.0
        hkey[0] = 0.0
        hval[0] = sources[s]
        size = 1
        while size > 0:
            d = hkey[0]
            u = hval[0]
            size -= 1
            if size > 0:
                hkey[0] = hkey[size]
                hval[0] = hval[size]
                _sift_down(hkey, hval, size)
            if done[u]:
                continue
            done[u] = 1
            for e in range(indptr[u], indptr[u + 1]):
                j = indices[e]
                nd = d + weights[e]
                if nd < dist[s, j]:
                    dist[s, j] = nd
                    hkey[size] = nd
                    hval[size] = j
                    _sift_up(hkey, hval, size)
                    size += 1
    return out


def knn_bruteforce(const double[:, ::1] pts, Py_ssize_t k, double quantum=0.0):
    """Exact k nearest neighbours excluding self; ties go to the lower index.

    With ``quantum > 0`` squared distances are compared as ``floor(d2 / quantum)``.
    """
    cdef Py_ssize_t n = pts.shape[0]
    cdef Py_ssize_t dim = pts.shape[1]
    out = np.empty((n, k), dtype=np.int64)
    cdef long[:, ::1] idx = out
    cdef double[::1] bd = np.empty(k + 1, dtype=np.float64)
    cdef long[::1] bi = np.empty(k + 1, dtype=np.int64)
    cdef Py_ssize_t i, j, a, m, pos
    cdef double d, t
    cdef double inv_q = 1.0 / quantum if quantum > 0 else 0.0
    for i in range(n):
        m = 0
        for j in range(n):
            if j == i:
                continue
            d = 0.0
            for a in range(dim):
                t = pts[i, a] - pts[j, a]
                d += t * t
            if inv_q > 0:
                d = floor(d * inv_q)
            # j increases, so an equal distance never displaces an earlier index
            if m == k and d >= bd[k - 1]:
                continue
            pos = m if m < k else k - 1
            while pos > 0 and bd[pos - 1] > d:
                bd[pos] = bd[pos - 1]
                bi[pos] = bi[pos - 1]
                pos -= 1
            bd[pos] = d
            bi[pos] = j
            if m < k:
                m += 1
        for a in range(k):
            idx[i, a] = bi[a]
    return out
