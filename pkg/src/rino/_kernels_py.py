"""Pure-Python reference versions of the compiled kernels."""
import heapq

import numpy as np


def dijkstra_many(indptr, indices, weights, sources):
    n = len(indptr) - 1
    out = np.full((len(sources), n), np.inf)
    indptr = np.asarray(indptr).tolist()
    indices = np.asarray(indices).tolist()
    weights = np.asarray(weights, dtype=float).tolist()
    for row, src in enumerate(np.asarray(sources).tolist()):
        dist = [np.inf] * n
        dist[src] = 0.0
        done = [False] * n
        heap = [(0.0, src)]
        while heap:
            d, u = heapq.heappop(heap)
            if done[u]:
                continue
            done[u] = True
            for e in range(indptr[u], indptr[u + 1]):
                j = indices[e]
                nd = d + weights[e]
                if nd < dist[j]:
                    dist[j] = nd
                    heapq.heappush(heap, (nd, j))
        out[row] = dist
    return out


def knn_bruteforce(pts, k, quantum=0.0):
    pts = np.asarray(pts, dtype=float)
    n = len(pts)
    out = np.empty((n, k), dtype=np.int64)
    order = np.arange(n)
    for start in range(0, n, 256):
        block = pts[start:start + 256]
        d2 = ((block[:, None, :] - pts[None, :, :]) ** 2).sum(-1)
        if quantum > 0:
            d2 = np.floor(d2 * (1.0 / quantum))
        rows = np.arange(len(block))
        d2[rows, rows + start] = np.inf
        for r in range(len(block)):
            # lexsort: primary key distance, secondary key index
            out[start + r] = np.lexsort((order, d2[r]))[:k]
    return out
