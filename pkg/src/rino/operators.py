"""Discrete differential operators on triangle meshes and their spectra.

Everything is float64. Per-vertex tangent frames are deterministic
functions of the geometry, so rotating a mesh rotates its frames and
leaves the cotangent Laplacian, the mass matrix, the complex gradient
operator and the connection Laplacian unchanged.
"""
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg as sla
from scipy import sparse
from scipy.sparse import linalg as spla

logger = logging.getLogger(__name__)

COT_CLAMP = 1e-8
DEGENERATE_AREA = 1e-14
DEFAULT_K = 200
DEFAULT_KQ = 30
# at or below this many vertices the generalized problem is solved densely
DENSE_EIG_MAX_N = 500


class OperatorError(ValueError):
    pass


class EigenSolveError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class Operators:
    """Mass, stiffness, tangent frames, complex gradient and connection Laplacian.

    ``frames[i]`` stacks the rows (first tangent, second tangent, normal).
    ``grad @ f`` gives one complex number per vertex, the intrinsic gradient
    of ``f`` in that vertex's tangent frame. ``conn`` is Hermitian.
    """

    mass: np.ndarray
    stiffness: sparse.csr_matrix
    frames: np.ndarray
    grad: sparse.csr_matrix
    conn: sparse.csr_matrix
    warnings: tuple = ()

    @property
    def n(self):
        return len(self.mass)

    def mass_matrix(self):
        return sparse.diags(self.mass)


@dataclass(frozen=True, eq=False)
class SpectralBasis:
    evecs: np.ndarray
    evals: np.ndarray
    mass: np.ndarray

    @property
    def k(self):
        return len(self.evals)

    def project(self, f):
        """Coefficients ``Phi^T M f`` (mass-weighted pseudo-inverse)."""
        f = np.asarray(f)
        w = self.mass.reshape((-1,) + (1,) * (f.ndim - 1)) * f
        return np.tensordot(self.evecs.conj().T, w, axes=1)


ConnectionBasis = SpectralBasis


def _triangle_geometry(mesh):
    v, t = mesh.vertices, mesh.triangles
    p0, p1, p2 = v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]
    cr = np.cross(p1 - p0, p2 - p0)
    dbl_area = np.linalg.norm(cr, axis=1)
    return p0, p1, p2, cr, dbl_area


def cotangent_laplacian(mesh, notes=None):
    """Symmetric PSD cotangent stiffness matrix with clamped edge weights."""
    n = mesh.n_vertices
    t = mesh.triangles
    p0, p1, p2, _, dbl = _triangle_geometry(mesh)
    degenerate = dbl < 2 * DEGENERATE_AREA
    if degenerate.any() and notes is not None:
        notes.append(f"{int(degenerate.sum())} degenerate triangles dropped from the cotangent weights")
    safe = np.where(degenerate, 1.0, dbl)
    corners = ((p1 - p0, p2 - p0), (p2 - p1, p0 - p1), (p0 - p2, p1 - p2))
    rows, cols, vals = [], [], []
    for c, (a, b) in enumerate(corners):
        cot = np.einsum("ij,ij->i", a, b) / safe
        cot[degenerate] = 0.0
        j, k = t[:, (c + 1) % 3], t[:, (c + 2) % 3]
        rows += [j, k]
        cols += [k, j]
        vals += [0.5 * cot, 0.5 * cot]
    W = sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    ).tocsr()
    W.sum_duplicates()
    clamped = W.data < COT_CLAMP
    if clamped.any() and notes is not None:
        notes.append(f"{int(clamped.sum() // 2)} edge weights clamped to {COT_CLAMP:g}")
    W.data = np.maximum(W.data, COT_CLAMP)
    L = sparse.diags(np.asarray(W.sum(axis=1)).ravel()) - W
    return L.tocsr(), W


def lumped_mass(mesh):
    """Barycentric lumping: each vertex receives a third of its triangles' area."""
    a = mesh.face_areas / 3.0
    return np.bincount(mesh.triangles.ravel(), weights=np.repeat(a, 3), minlength=mesh.n_vertices)


def _neighbors(W):
    W = W.tocsr()
    W.sort_indices()
    return W.indptr, W.indices


def tangent_frames(mesh, W=None):
    """Orthonormal right-handed per-vertex frames, shape (n, 3, 3).

    Normal: area-weighted mean of incident face normals. First tangent:
    the edge to the lowest-index neighbour, projected into the tangent
    plane. Second tangent: normal x first tangent.
    """
    v, t = mesh.vertices, mesh.triangles
    n = mesh.n_vertices
    _, _, _, cr, _ = _triangle_geometry(mesh)
    nrm = np.zeros((n, 3))
    for c in range(3):
        np.add.at(nrm, t[:, c], cr)
    ln = np.linalg.norm(nrm, axis=1)
    bad = ln < 1e-300
    if bad.any():
        nrm[bad] = [0.0, 0.0, 1.0]
        ln[bad] = 1.0
    nrm /= ln[:, None]
    if W is None:
        W = cotangent_laplacian(mesh)[1]
    indptr, indices = _neighbors(W)
    t1 = np.zeros((n, 3))
    for i in range(n):
        done = False
        for j in indices[indptr[i]:indptr[i + 1]]:
            e = v[j] - v[i]
            e = e - (e @ nrm[i]) * nrm[i]
            le = np.linalg.norm(e)
            if le > 1e-12 * max(1.0, np.linalg.norm(v[j] - v[i])):
                t1[i] = e / le
                done = True
                break
        if not done:
            a = np.eye(3)[np.argmin(np.abs(nrm[i]))]
            a = a - (a @ nrm[i]) * nrm[i]
            t1[i] = a / np.linalg.norm(a)
    t2 = np.cross(nrm, t1)
    return np.stack([t1, t2, nrm], axis=1)


def _directed_edges(W):
    indptr, indices = _neighbors(W)
    src = np.repeat(np.arange(len(indptr) - 1), np.diff(indptr))
    return src, indices


def gradient_operator(mesh, frames, W):
    """Complex (n, n) operator: per-vertex least-squares gradient in the local frame."""
    v = mesh.vertices
    n = mesh.n_vertices
    src, dst = _directed_edges(W)
    e = v[dst] - v[src]
    ex = np.einsum("ij,ij->i", e, frames[src, 0])
    ey = np.einsum("ij,ij->i", e, frames[src, 1])
    N = np.zeros((n, 2, 2))
    np.add.at(N, (src, 0, 0), ex * ex)
    np.add.at(N, (src, 0, 1), ex * ey)
    np.add.at(N, (src, 1, 1), ey * ey)
    N[:, 1, 0] = N[:, 0, 1]
    tr = N[:, 0, 0] + N[:, 1, 1]
    N += (1e-12 * tr)[:, None, None] * np.eye(2)
    Ninv = np.linalg.inv(N)
    cx = Ninv[src, 0, 0] * ex + Ninv[src, 0, 1] * ey
    cy = Ninv[src, 1, 0] * ex + Ninv[src, 1, 1] * ey
    c = cx + 1j * cy
    diag = -np.bincount(src, weights=cx, minlength=n) - 1j * np.bincount(src, weights=cy, minlength=n)
    G = sparse.coo_matrix(
        (np.concatenate([c, diag]), (np.concatenate([src, np.arange(n)]), np.concatenate([dst, np.arange(n)]))),
        shape=(n, n),
    ).tocsr()
    G.sum_duplicates()
    return G


def transport_angles(mesh, frames, W):
    """Angle of the rotation carrying frame j onto frame i along each directed edge (i, j)."""
    v = mesh.vertices
    src, dst = _directed_edges(W)
    e = v[dst] - v[src]
    ang_i = np.arctan2(np.einsum("ij,ij->i", e, frames[src, 1]), np.einsum("ij,ij->i", e, frames[src, 0]))
    ang_j = np.arctan2(np.einsum("ij,ij->i", e, frames[dst, 1]), np.einsum("ij,ij->i", e, frames[dst, 0]))
    return src, dst, ang_i - ang_j


def connection_laplacian(mesh, frames, W):
    """Hermitian connection Laplacian: (L_c z)_i = sum_j w_ij (z_i - r_ij z_j)."""
    n = mesh.n_vertices
    src, dst, rho = transport_angles(mesh, frames, W)
    Wc = W.tocsr()
    Wc.sort_indices()
    w = Wc.data
    r = np.exp(1j * rho)
    off = sparse.coo_matrix((-w * r, (src, dst)), shape=(n, n)).tocsr()
    # exact Hermitian symmetry regardless of rounding in the two arctan2 calls
    off = 0.5 * (off + off.conj().T)
    deg = np.asarray(W.sum(axis=1)).ravel()
    return (sparse.diags(deg.astype(complex)) + off).tocsr()


def build_operators(mesh):
    """Construct all operators for a (unit-area normalized) mesh."""
    notes = []
    used = np.zeros(mesh.n_vertices, dtype=bool)
    used[mesh.triangles.ravel()] = True
    if not used.all():
        raise OperatorError(f"{int((~used).sum())} isolated vertices (not in any triangle)")
    L, W = cotangent_laplacian(mesh, notes)
    mass = lumped_mass(mesh)
    tiny = mass <= 0
    if tiny.any():
        notes.append(f"{int(tiny.sum())} vertices with zero lumped area clamped")
        mass = np.where(tiny, 1e-12 * mass.mean(), mass)
    frames = tangent_frames(mesh, W)
    G = gradient_operator(mesh, frames, W)
    Lc = connection_laplacian(mesh, frames, W)
    for msg in notes:
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    return Operators(mass, L, frames, G, Lc, tuple(notes))


def effective_k(n, k, what="k"):
    if n < 2 * k:
        kk = max(1, n // 2)
        warnings.warn(f"{what}={k} reduced to {kk} for a mesh with {n} vertices", RuntimeWarning, stacklevel=3)
        return kk
    return k


def _fix_signs(evecs):
    out = evecs.copy()
    scale = np.abs(out).max(axis=0)
    for c in range(out.shape[1]):
        nz = np.flatnonzero(np.abs(out[:, c]) > 1e-6 * scale[c])
        if len(nz) and out[nz[0], c] < 0:
            out[:, c] = -out[:, c]
    return out


def _rayleigh_ritz(A, mass, V):
    """Polish a near-invariant subspace: dense solve of the projected pencil."""
    AV = A @ V
    K = V.conj().T @ AV
    B = V.conj().T @ (mass[:, None] * V)
    K = 0.5 * (K + K.conj().T)
    B = 0.5 * (B + B.conj().T)
    lam, Y = sla.eigh(K, B)
    return lam, V @ Y


def _lowest_eigs(A, mass, k, shift=-1e-8, seed=0):
    n = A.shape[0]
    if n <= DENSE_EIG_MAX_N or k >= n - 1:
        lam, V = sla.eigh(A.toarray(), np.diag(mass), subset_by_index=[0, min(k, n) - 1])
        return lam, V
    M = sparse.diags(mass)
    v0 = np.random.default_rng(seed).standard_normal(n)
    try:
        lam, V = spla.eigsh(A, k=k, M=M, sigma=shift, which="LM", v0=v0, tol=0.0, maxiter=50 * k)
    except spla.ArpackNoConvergence as exc:
        V = exc.eigenvectors
        res = np.inf
        if V is not None and V.size:
            res = float(np.linalg.norm(A @ V - (M @ V) * exc.eigenvalues, axis=0).max())
        raise EigenSolveError(f"Lanczos did not converge for k={k}; attained residual {res:.3e}") from None
    except RuntimeError as exc:
        raise EigenSolveError(f"sparse factorization failed at shift {shift:g}: {exc}") from None
    lam, V = _rayleigh_ritz(A, mass, V)
    return lam, V


def eig_generalized(L, mass, k, seed=0):
    """Smallest ``k`` eigenpairs of ``L phi = lam M phi`` with M-orthonormal vectors."""
    n = L.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in [1, {n}], got {k}")
    mass = np.asarray(mass, dtype=float)
    lam, V = _lowest_eigs(sparse.csr_matrix(L, dtype=float), mass, k, seed=seed)
    order = np.argsort(lam)
    lam, V = lam[order], V[:, order]
    V = _fix_signs(V)
    lam = np.maximum(lam, 0.0)
    return SpectralBasis(V, lam, mass)


def _realify(Lc):
    A, B = Lc.real, Lc.imag
    return sparse.bmat([[A, -B], [B, A]]).tocsr()


def _fix_phase(Z):
    out = Z.copy()
    idx = np.argmax(np.abs(out), axis=0)
    ph = out[idx, np.arange(out.shape[1])]
    return out * (np.conj(ph) / np.abs(ph))[None, :]


def eig_connection(Lc, mass, kq, seed=0):
    """Smallest ``kq`` eigenpairs of the Hermitian pencil via its real 2n embedding."""
    n = Lc.shape[0]
    if not 1 <= kq <= n:
        raise ValueError(f"kq must lie in [1, {n}], got {kq}")
    mass = np.asarray(mass, dtype=float)
    R = _realify(sparse.csr_matrix(Lc, dtype=complex))
    m2 = np.concatenate([mass, mass])
    want = min(2 * kq + 2, 2 * n)
    lam, V = _lowest_eigs(R, m2, want, seed=seed)
    order = np.argsort(lam)
    lam, V = lam[order], V[:, order]
    chosen, vals = [], []
    for c in range(V.shape[1]):
        z = V[:n, c] + 1j * V[n:, c]
        for q in chosen:
            z = z - (q.conj() @ (mass * z)) * q
        nrm2 = float(np.real(z.conj() @ (mass * z)))
        # each complex eigenvector occupies a 2D real invariant subspace with norm^2 = 1/2 split
        if nrm2 > 0.25:
            chosen.append(z / np.sqrt(nrm2))
            vals.append(lam[c])
        if len(chosen) == kq:
            break
    if len(chosen) < kq:
        raise EigenSolveError(f"recovered only {len(chosen)} of {kq} complex eigenpairs")
    Z = np.stack(chosen, axis=1)
    # re-diagonalize in the complex subspace so clusters come out as exact eigenvectors
    lam_c, Z = _rayleigh_ritz(sparse.csr_matrix(Lc, dtype=complex), mass, Z)
    Z = _fix_phase(Z)
    return SpectralBasis(Z, np.maximum(lam_c, 0.0), mass)


@dataclass(frozen=True, eq=False)
class Shape:
    """A mesh with its operators and both truncated spectral bases."""

    mesh: object
    ops: Operators
    basis: SpectralBasis
    cbasis: SpectralBasis
    notes: tuple = field(default=())

    @property
    def n(self):
        return self.mesh.n_vertices


def prepare_shape(mesh, k=DEFAULT_K, kq=DEFAULT_KQ, ops=None):
    ops = build_operators(mesh) if ops is None else ops
    n = mesh.n_vertices
    k_eff = effective_k(n, k)
    kq_eff = effective_k(n, kq, "kq")
    basis = eig_generalized(ops.stiffness, ops.mass, k_eff)
    cbasis = eig_connection(ops.conn, ops.mass, kq_eff)
    return Shape(mesh, ops, basis, cbasis)


def heat_diffuse(basis, u, t):
    """Spectral heat diffusion ``Phi exp(-lam t) Phi^T M u``, one time per channel.

    ``u`` is (n, d) with ``t`` of length d, or (n, c, 3) with ``t`` of
    length c broadcast over the last axis.
    """
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("diffusion times must be nonnegative")
    u = np.asarray(u, dtype=float)
    coefs = basis.project(u)
    decay = np.exp(-np.multiply.outer(basis.evals, t))
    if u.ndim == 3:
        return np.einsum("nk,kcd->ncd", basis.evecs, decay[:, :, None] * coefs)
    return basis.evecs @ (decay * coefs)


def spectral_descriptors(basis, kind, d, wks_variance=7.0):
    """HKS or WKS descriptors, shape (n, d), each column with unit mass-weighted L1 norm."""
    if d < 1:
        raise ValueError("descriptor count must be at least 1")
    if basis.k < 2:
        raise ValueError("need at least two eigenpairs")
    lam, phi = basis.evals, basis.evecs
    phi2 = phi ** 2
    if kind == "hks":
        nz = lam[lam > 1e-8 * lam.max()]
        ts = np.geomspace(4 * np.log(10) / nz[-1], 4 * np.log(10) / nz[0], d)
        desc = phi2 @ np.exp(-np.outer(lam, ts))
    elif kind == "wks":
        keep = lam > 1e-8 * lam.max()
        loglam = np.log(lam[keep])
        phi2 = phi2[:, keep]
        lo, hi = loglam[0], loglam[-1]
        sigma = wks_variance * (hi - lo) / d
        lo, hi = lo + 2 * sigma, hi - 2 * sigma
        if hi <= lo:
            lo, hi = loglam[0], loglam[-1]
        es = np.linspace(lo, hi, d)
        coefs = np.exp(-((es[None, :] - loglam[:, None]) ** 2) / (2 * sigma ** 2))
        desc = (phi2 @ coefs) / coefs.sum(0)[None, :]
    else:
        raise ValueError(f"unknown descriptor kind {kind!r}")
    norm = (basis.mass[:, None] * np.abs(desc)).sum(0)
    return desc / norm[None, :]
