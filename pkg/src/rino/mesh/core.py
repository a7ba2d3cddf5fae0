"""Triangle mesh container and the purely geometric operations on it."""
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .. import kernels


class MeshError(ValueError):
    """Raised for meshes that violate the container invariants."""


def _frozen(a):
    a = np.array(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Mesh:
    """Immutable triangle mesh.

    Parameters
    ----------
    vertices : array_like, shape (n, 3)
    triangles : array_like, shape (m, 3)
        0-based vertex indices. Non-manifold connectivity is allowed.
    labels : array_like, shape (n,), optional
        Ground-truth correspondence labels; two meshes of the same family
        correspond where labels agree.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    labels: np.ndarray = field(default=None)

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64)
        t = np.asarray(self.triangles, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise MeshError(f"vertices must have shape (n, 3), got {v.shape}")
        if t.size == 0:
            t = t.reshape(0, 3)
        if t.ndim != 2 or t.shape[1] != 3:
            raise MeshError(f"triangles must have shape (m, 3), got {t.shape}")
        if not np.all(np.isfinite(v)):
            raise MeshError("vertex coordinates contain NaN or Inf")
        if len(t):
            if t.min() < 0 or t.max() >= len(v):
                raise MeshError(f"triangle index out of range [0, {len(v)})")
            if np.any((t[:, 0] == t[:, 1]) | (t[:, 1] == t[:, 2]) | (t[:, 0] == t[:, 2])):
                raise MeshError("triangle repeats a vertex index")
        object.__setattr__(self, "vertices", _frozen(v))
        object.__setattr__(self, "triangles", _frozen(t))
        if self.labels is not None:
            lab = np.asarray(self.labels, dtype=np.int64)
            if lab.shape != (len(v),):
                raise MeshError("labels must have one entry per vertex")
            object.__setattr__(self, "labels", _frozen(lab))
        if not self.area > 0:
            raise MeshError("total surface area must be positive")

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_faces(self):
        return len(self.triangles)

    @property
    def face_areas(self):
        v, t = self.vertices, self.triangles
        cr = np.cross(v[t[:, 1]] - v[t[:, 0]], v[t[:, 2]] - v[t[:, 0]])
        return 0.5 * np.linalg.norm(cr, axis=1)

    @property
    def area(self):
        return float(self.face_areas.sum())

    def edges(self):
        """Unique undirected edges as a sorted (e, 2) array."""
        t = self.triangles
        e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        e = np.sort(e, axis=1)
        return np.unique(e, axis=0)

    def edge_lengths(self):
        e = self.edges()
        return np.linalg.norm(self.vertices[e[:, 1]] - self.vertices[e[:, 0]], axis=1)

    def replace(self, vertices=None, triangles=None, labels=None):
        return Mesh(
            self.vertices if vertices is None else vertices,
            self.triangles if triangles is None else triangles,
            self.labels if labels is None else labels,
        )

    def rotated(self, R):
        """Copy with every vertex row-multiplied by ``R`` (``V @ R``)."""
        return self.replace(vertices=self.vertices @ np.asarray(R, dtype=float))

    def permuted(self, perm):
        """Relabel vertices so that new vertex ``i`` is old vertex ``perm[i]``."""
        perm = np.asarray(perm)
        inv = np.empty_like(perm)
        inv[perm] = np.arange(len(perm))
        labels = None if self.labels is None else self.labels[perm]
        return Mesh(self.vertices[perm], inv[self.triangles], labels)

    def content_hash(self):
        import hashlib

        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.vertices, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(self.triangles, dtype="<i8").tobytes())
        return h.digest()


@dataclass(frozen=True)
class GeodesicField:
    source: int
    dist: np.ndarray

    @property
    def unreachable(self):
        return ~np.isfinite(self.dist)


def area_centroid(mesh):
    v, t = mesh.vertices, mesh.triangles
    a = mesh.face_areas
    centers = v[t].mean(axis=1)
    return (a[:, None] * centers).sum(0) / a.sum()


def normalize_unit_area(mesh):
    """Translate to the area-weighted centroid and scale to total area 1."""
    area = mesh.area
    if not area > 0:
        raise MeshError("cannot normalize a mesh with zero area")
    v = (mesh.vertices - area_centroid(mesh)) / np.sqrt(area)
    return mesh.replace(vertices=v)


def perturb_gaussian(mesh, sigma, seed):
    """Add i.i.d. N(0, sigma^2) noise to every coordinate.

    ``sigma`` is a standard deviation in the (unit-area) length units of
    the mesh. Connectivity and labels are kept.
    """
    if sigma < 0:
        raise ValueError(f"sigma must be nonnegative, got {sigma}")
    if sigma == 0:
        return mesh.replace()
    rng = np.random.default_rng(seed)
    return mesh.replace(vertices=mesh.vertices + rng.normal(0.0, sigma, mesh.vertices.shape))


def edge_graph(mesh):
    """Symmetric CSR adjacency with Euclidean edge lengths as weights."""
    e = mesh.edges()
    w = np.linalg.norm(mesh.vertices[e[:, 1]] - mesh.vertices[e[:, 0]], axis=1)
    n = mesh.n_vertices
    g = sparse.coo_matrix(
        (np.concatenate([w, w]), (np.concatenate([e[:, 0], e[:, 1]]), np.concatenate([e[:, 1], e[:, 0]]))),
        shape=(n, n),
    ).tocsr()
    g.sort_indices()
    return g


def geodesic_distances(mesh, source, graph=None):
    """Dijkstra distances over the edge graph; unreachable vertices get ``inf``."""
    n = mesh.n_vertices
    if not 0 <= source < n:
        raise IndexError(f"source {source} out of range [0, {n})")
    g = edge_graph(mesh) if graph is None else graph
    d = kernels.dijkstra_many(g.indptr, g.indices, g.data, [source])[0]
    return GeodesicField(int(source), d)


def geodesic_matrix(mesh, sources=None, graph=None):
    """Distances from each of ``sources`` (default: all vertices), shape (s, n)."""
    g = edge_graph(mesh) if graph is None else graph
    if sources is None:
        sources = np.arange(mesh.n_vertices)
    return kernels.dijkstra_many(g.indptr, g.indices, g.data, sources)


KNN_QUANTUM = 1e-10


def knn_graph(points, k):
    """Euclidean k nearest neighbours of each point, excluding itself.

    Ties are broken in favour of the lower index. Squared distances are
    compared on a grid of 1e-10 times the mean squared radius, so that equal
    distances stay equal after a rotation perturbs them by round-off.
    """
    points = np.asarray(points, dtype=float)
    if k >= len(points):
        raise ValueError(f"k={k} must be smaller than the number of points ({len(points)})")
    if k < 1:
        raise ValueError("k must be positive")
    spread = np.mean(np.sum((points - points.mean(0)) ** 2, axis=1))
    return kernels.knn_bruteforce(points, k, quantum=KNN_QUANTUM * spread)
