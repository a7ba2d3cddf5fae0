"""On-disk cache of operators and spectral bases, keyed by mesh content."""
import hashlib
import logging
import os

import numpy as np
from scipy import sparse

from . import binfmt
from .operators import Operators, Shape, SpectralBasis, prepare_shape

logger = logging.getLogger(__name__)

MAGIC = b"RINO"
FORMAT_VERSION = 1
# bump when the discretization changes so stale entries miss
BUILD_VERSION = 1
CACHE_ENV = "RINO_CACHE_DIR"


def cache_key(mesh, k, kq):
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(mesh.vertices, dtype="<f8").tobytes())
    h.update(np.ascontiguousarray(mesh.triangles, dtype="<i8").tobytes())
    h.update(np.array([k, kq, BUILD_VERSION], dtype="<i8").tobytes())
    return h.digest()


def default_cache_dir():
    return os.environ.get(CACHE_ENV) or os.path.join(os.path.expanduser("~"), ".cache", "rino")


def cache_path(directory, key):
    return os.path.join(directory, key.hex()[:40] + ".rino")


def _put_sparse(out, name, m):
    m = m.tocsr()
    m.sort_indices()
    out[name + ".indptr"] = m.indptr
    out[name + ".indices"] = m.indices
    out[name + ".data"] = m.data
    out[name + ".shape"] = np.array(m.shape)


def _get_sparse(arr, name):
    shape = tuple(int(s) for s in arr[name + ".shape"])
    return sparse.csr_matrix(
        (arr[name + ".data"], arr[name + ".indices"].astype(np.int64), arr[name + ".indptr"].astype(np.int64)),
        shape=shape,
    )


def shape_arrays(shape):
    out = {
        "vertices": shape.mesh.vertices,
        "triangles": shape.mesh.triangles,
        "mass": shape.ops.mass,
        "frames": shape.ops.frames,
        "evecs": shape.basis.evecs,
        "evals": shape.basis.evals,
        "cevecs": shape.cbasis.evecs,
        "cevals": shape.cbasis.evals,
    }
    for name in ("stiffness", "grad", "conn"):
        _put_sparse(out, name, getattr(shape.ops, name))
    return out


def shape_from_arrays(arr, mesh):
    ops = Operators(
        arr["mass"], _get_sparse(arr, "stiffness"), arr["frames"], _get_sparse(arr, "grad"), _get_sparse(arr, "conn")
    )
    return Shape(
        mesh,
        ops,
        SpectralBasis(arr["evecs"], arr["evals"], ops.mass),
        SpectralBasis(arr["cevecs"], arr["cevals"], ops.mass),
    )


def cache_store(path, key, shape):
    binfmt.write(path, MAGIC, FORMAT_VERSION, key, shape_arrays(shape))


def cache_load(path, key, mesh):
    """Return the cached ``Shape`` or ``None`` on a miss.

    Raises ``binfmt.ChecksumError`` when the file exists but is corrupted.
    """
    if not os.path.exists(path):
        return None
    try:
        _, h, arr = binfmt.read(path, MAGIC, FORMAT_VERSION)
    except binfmt.VersionMismatch as exc:
        logger.warning("cache miss for %s: %s", path, exc)
        return None
    if h != key:
        logger.info("cache miss for %s: content hash differs", path)
        return None
    return shape_from_arrays(arr, mesh)


def cached_shape(mesh, k, kq, directory=None):
    """Load from the cache or build and store. Corrupted entries are rebuilt.

    Returns ``(shape, hit)``.
    """
    directory = directory or default_cache_dir()
    os.makedirs(directory, exist_ok=True)
    key = cache_key(mesh, k, kq)
    path = cache_path(directory, key)
    try:
        shape = cache_load(path, key, mesh)
    except binfmt.ContainerError as exc:
        logger.warning("rebuilding corrupted cache entry %s: %s", path, exc)
        shape = None
    if shape is not None:
        return shape, True
    shape = prepare_shape(mesh, k, kq)
    cache_store(path, key, shape)
    return shape, False
