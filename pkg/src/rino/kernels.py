"""Kernel dispatch: compiled extension when available, pure Python otherwise.

Set ``RINO_PURE_PYTHON=1`` before import to force the fallback.
"""
import os

import numpy as np

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("RINO_PURE_PYTHON") != "1":
    try:
        from . import _ckernels as _impl  # noqa: F811
        BACKEND = "compiled"
    except ImportError:
        pass


def dijkstra_many(indptr, indices, weights, sources, impl=None):
    """Distances (len(sources), n) over a CSR graph with nonnegative weights."""
    impl = impl or _impl
    return impl.dijkstra_many(
        np.ascontiguousarray(indptr, dtype=np.int64),
        np.ascontiguousarray(indices, dtype=np.int64),
        np.ascontiguousarray(weights, dtype=np.float64),
        np.ascontiguousarray(np.atleast_1d(sources), dtype=np.int64),
    )


def knn_bruteforce(points, k, impl=None, quantum=0.0):
    """Indices (n, k) of the nearest other points; squared distances are floored to ``quantum``."""
    impl = impl or _impl
    return impl.knn_bruteforce(np.ascontiguousarray(points, dtype=np.float64), int(k), float(quantum))
