"""Ops with hand-derived backward rules: spectral heat diffusion, the
row-wise masked ridge solve, and the unitary polar factor."""
import numpy as np

from .ops import ShapeError, _check_complex, _finish, from_complex, to_complex
from .tensor import as_tensor


def diffusion(basis, u, t):
    """Heat diffusion ``Phi exp(-lambda t) Phi^T M u`` with one time per channel.

    Parameters
    ----------
    basis : SpectralBasis
        Real eigenbasis with ``evecs`` (n, k), ``evals`` (k,) and lumped ``mass`` (n,).
    u : Tensor
        (n, c) or (n, c, 3).
    t : Tensor
        (c,) positive diffusion times.
    """
    u, t = as_tensor(u), as_tensor(t)
    phi, lam, mass = basis.evecs, basis.evals, basis.mass
    n, k = phi.shape
    if u.ndim not in (2, 3) or u.shape[0] != n:
        raise ShapeError(f"diffusion: u has shape {u.shape}, basis has {n} vertices")
    c = u.shape[1]
    if t.shape != (c,):
        raise ShapeError(f"diffusion: t has shape {t.shape}, expected ({c},)")
    if np.any(t.data < 0):
        raise ValueError("diffusion time must be nonnegative")
    u2 = u.data.reshape(n, -1)
    coefs = phi.T @ (mass[:, None] * u2)  # (k, c*d)
    d = u2.shape[1] // c
    E = np.exp(-np.outer(lam, t.data))  # (k, c)
    Ef = np.repeat(E, d, axis=1)
    h = (phi @ (coefs * Ef)).reshape(u.shape)

    def back(g):
        gs = phi.T @ g.reshape(n, -1)
        gu = gt = None
        if u.requires_grad:
            gu = (mass[:, None] * (phi @ (gs * Ef))).reshape(u.shape)
        if t.requires_grad:
            w = (gs * coefs * Ef).reshape(k, c, d).sum(-1)
            gt = -(lam[:, None] * w).sum(0)
        return gu, gt

    return _finish(h, (u, t), back, "diffusion")


def ridge_solve(A, B, mask, gamma):
    """Row-wise masked ridge regression.

    Row ``i`` of the result minimises
    ``||c A - b_i||^2 + gamma * sum_j mask[i, j] * c_j**2``.

    Parameters
    ----------
    A : Tensor (kx, d)
    B : Tensor (ky, d)
    mask : ndarray (ky, kx), constant and nonnegative
    gamma : float
    """
    A, B = as_tensor(A), as_tensor(B)
    mask = np.asarray(mask, dtype=np.float64)
    if A.ndim != 2 or B.ndim != 2 or A.shape[1] != B.shape[1]:
        raise ShapeError(f"ridge_solve: A {A.shape} and B {B.shape} are incompatible")
    kx, ky = A.shape[0], B.shape[0]
    if mask.shape != (ky, kx):
        raise ShapeError(f"ridge_solve: mask has shape {mask.shape}, expected {(ky, kx)}")
    Ad, Bd = A.data, B.data
    AAt = Ad @ Ad.T
    S = np.broadcast_to(AAt, (ky, kx, kx)).copy()
    idx = np.arange(kx)
    S[:, idx, idx] += gamma * mask
    rhs = Bd @ Ad.T  # (ky, kx)
    try:
        C = np.linalg.solve(S, rhs[..., None])[..., 0]
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"ridge_solve: singular normal equations ({exc})") from None

    def back(g):
        V = np.linalg.solve(S, g[..., None])[..., 0]  # rows v_i, S symmetric
        gA = gB = None
        if B.requires_grad:
            gB = V @ Ad
        if A.requires_grad:
            R = Bd - C @ Ad
            gA = V.T @ R - C.T @ (V @ Ad)
        return gA, gB

    return _finish(C, (A, B), back, "ridge_solve")


def polar(X, rel_floor=1e-12):
    """Unitary polar factor ``U V^H`` of a square complex matrix ``X = U S V^H``.

    ``X`` is a (k, k, 2) real-pair tensor. The backward rule is that of the
    orthogonal Procrustes solution; ``rel_floor`` keeps ``1 / (s_i + s_j)``
    finite when ``X`` is near rank deficient.
    """
    X = as_tensor(X)
    _check_complex(X, "polar")
    if X.ndim != 3 or X.shape[0] != X.shape[1]:
        raise ShapeError(f"polar: expected a square complex matrix, got {X.shape}")
    Xc = to_complex(X)
    U, s, Vh = np.linalg.svd(Xc)
    Q = U @ Vh
    denom = s[:, None] + s[None, :]
    K = 1.0 / np.maximum(denom, max(rel_floor * s.max(), np.finfo(float).tiny))

    def back(g):
        Gc = to_complex(g)
        V = Vh.conj().T
        Gam = U.conj().T @ Gc @ V
        Ec = K * (Gam - Gam.conj().T)
        return (from_complex(U @ Ec @ Vh),)

    return _finish(from_complex(Q), (X,), back, "polar")
