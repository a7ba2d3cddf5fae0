"""Functional, complex functional and soft pointwise maps, and conversions
between them.

Every solver accepts numpy arrays or autodiff tensors. Given tensors it
returns tensors (recorded on the active tape); given plain arrays it returns
plain arrays, complex-valued where the map is complex. Tensor complex values
use the trailing real/imaginary axis of the autodiff engine.

Direction convention: ``C_XY`` maps X-coefficients to Y-coefficients and has
shape (k_Y, k_X); a soft map ``Pi_YX`` has one row per Y vertex, each a
distribution over X vertices.
"""
import warnings

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

DEFAULT_GAMMA = 1e-3
DEFAULT_GAMMA_Q = 1e-3
DEFAULT_TAU = 0.07


class MapError(ValueError):
    pass


def _any_tensor(*xs):
    return any(isinstance(x, Tensor) for x in xs)


def _const(a):
    return Tensor(np.asarray(a, dtype=np.float64))


def _cconst(a):
    return Tensor(ad.from_complex(np.asarray(a, dtype=complex)))


def _to_ctensor(W):
    """Complex ndarray (...) or real-pair tensor (..., 2) -> real-pair tensor."""
    if isinstance(W, Tensor):
        return W
    W = np.asarray(W)
    if not np.iscomplexobj(W):
        raise MapError("expected a complex array")
    return _cconst(W)


def spectral_mask(evals_x, evals_y):
    """Commutativity mask ``(lam_Y[i] - lam_X[j])**2 / max(lam)**2``, shape (k_Y, k_X)."""
    lx, ly = np.asarray(evals_x, dtype=float), np.asarray(evals_y, dtype=float)
    scale = max(np.abs(lx).max(), np.abs(ly).max())
    D = (ly[:, None] - lx[None, :]) ** 2
    return D / scale ** 2 if scale > 0 else D


def feature_coeffs(basis, F):
    """Spectral coefficients ``Phi^H M F`` of per-vertex features (n, d)."""
    pinv = basis.evecs.conj().T * basis.mass[None, :]
    if isinstance(F, Tensor):
        if F.shape[0] != basis.evecs.shape[0]:
            raise MapError(f"features have {F.shape[0]} rows, basis has {basis.evecs.shape[0]} vertices")
        if np.iscomplexobj(pinv):
            return ad.ceinsum("kn,nd->kd", _cconst(pinv), F)
        return ad.matmul(_const(pinv), F)
    F = np.asarray(F)
    if F.shape[0] != basis.evecs.shape[0]:
        raise MapError(f"features have {F.shape[0]} rows, basis has {basis.evecs.shape[0]} vertices")
    return pinv @ F


def _check_ridge(A, gamma, kx, d):
    if gamma < 0:
        raise MapError("regulariser weight must be nonnegative")
    if gamma == 0 and d < kx:
        raise MapError(f"only {d} descriptors for {kx} basis functions: the system is singular; use gamma > 0")


def solve_fmap(A, B, evals_x, evals_y, gamma=DEFAULT_GAMMA):
    """Functional map ``C`` (k_Y, k_X) minimising
    ``||C A - B||_F^2 + gamma * sum_ij D_ij C_ij^2``.

    ``A`` (k_X, d) and ``B`` (k_Y, d) hold descriptor coefficients.
    """
    kx, d = A.shape
    if B.shape[1] != d:
        raise MapError(f"descriptor counts differ: {A.shape} vs {B.shape}")
    _check_ridge(A, gamma, kx, d)
    mask = spectral_mask(evals_x, evals_y)
    if mask.shape != (B.shape[0], kx):
        raise MapError("eigenvalue counts do not match the coefficient matrices")
    if _any_tensor(A, B):
        return ad.ridge_solve(A, B, mask, gamma)
    return ad.ridge_solve(_const(A), _const(B), mask, gamma).data


def _solve_complex_ridge(AQ, BQ, mask, gamma):
    """Complex row-wise ridge via the real embedding [x y] [[P, Q], [-Q, P]]."""
    P, Qi = ad.real(AQ), ad.imag(AQ)
    top = ad.concat([P, Qi], axis=1)
    bottom = ad.concat([ad.scale(Qi, -1.0), P], axis=1)
    At = ad.concat([top, bottom], axis=0)
    Bt = ad.concat([ad.real(BQ), ad.imag(BQ)], axis=1)
    X = ad.ridge_solve(At, Bt, np.concatenate([mask, mask], axis=1), gamma)
    k = AQ.shape[0]
    return ad.complex_(X[:, :k], X[:, k:])


def solve_cfmap(WX, WY, cbasis_x, cbasis_y, gamma_q=DEFAULT_GAMMA_Q):
    """Complex functional map ``Q`` (kq_Y, kq_X) between intrinsic gradient fields.

    ``WX`` (n_X, d) and ``WY`` (n_Y, d) are complex per-vertex tangent
    vectors (``G F``) with matching columns.
    """
    as_tensor = _any_tensor(WX, WY)
    WXt, WYt = _to_ctensor(WX), _to_ctensor(WY)
    if WXt.shape[1] != WYt.shape[1]:
        raise MapError(f"gradient fields have {WXt.shape[1]} and {WYt.shape[1]} columns")
    AQ = feature_coeffs(cbasis_x, WXt)
    BQ = feature_coeffs(cbasis_y, WYt)
    kx, d = AQ.shape[0], AQ.shape[1]
    _check_ridge(AQ, gamma_q, kx, d)
    mask = spectral_mask(cbasis_x.evals, cbasis_y.evals)
    Q = _solve_complex_ridge(AQ, BQ, mask, gamma_q)
    return Q if as_tensor else ad.to_complex(Q.data)


def intrinsic_gradient(G, F):
    """Complex gradients ``G F`` of real features; tensor in, tensor out."""
    if isinstance(F, Tensor):
        from .rinonet import complex_grad_parts

        Gr, Gi = complex_grad_parts(G)
        return ad.complex_(ad.spmm(Gr, F), ad.spmm(Gi, F))
    return G @ np.asarray(F, dtype=float)


def soft_pointwise(Fa, Fb, tau=DEFAULT_TAU):
    """Row-stochastic ``softmax(Fa Fb^T / tau)``: row i of ``Fa`` over rows of ``Fb``."""
    if tau <= 0:
        raise MapError("temperature must be positive")
    if Fa.shape[1] != Fb.shape[1]:
        raise MapError(f"feature widths differ: {Fa.shape} vs {Fb.shape}")
    if _any_tensor(Fa, Fb):
        return ad.softmax(ad.matmul(ad.as_tensor(Fa), ad.transpose(ad.as_tensor(Fb))), tau)
    return ad.softmax(_const(np.asarray(Fa) @ np.asarray(Fb).T), tau).data


def hard_map_nn(FX, FY, block_bytes=1 << 27):
    """Index of the nearest ``FY`` row for each ``FX`` row; ties go to the lower index."""
    FX = np.asarray(FX.data if isinstance(FX, Tensor) else FX, dtype=float)
    FY = np.asarray(FY.data if isinstance(FY, Tensor) else FY, dtype=float)
    if FX.ndim != 2 or FY.ndim != 2 or FX.shape[1] != FY.shape[1] or len(FY) == 0:
        raise MapError(f"incompatible feature matrices {FX.shape} and {FY.shape}")
    step = max(1, block_bytes // (8 * FY.size))
    out = np.empty(len(FX), dtype=np.int64)
    for s in range(0, len(FX), step):
        diff = FX[s:s + step, None, :] - FY[None, :, :]
        out[s:s + step] = np.argmin((diff * diff).sum(-1), axis=1)
    return out


def pi_to_c(Pi_YX, basis_x, basis_y):
    """Functional map ``C_XY = Phi_Y^T M_Y Pi_YX Phi_X`` from a soft map with rows on Y."""
    if Pi_YX.shape != (basis_y.evecs.shape[0], basis_x.evecs.shape[0]):
        raise MapError(f"soft map shape {Pi_YX.shape} does not match the bases (rows must be Y vertices)")
    pinv_y = basis_y.evecs.T * basis_y.mass[None, :]
    if isinstance(Pi_YX, Tensor):
        return ad.matmul(_const(pinv_y), ad.matmul(Pi_YX, _const(basis_x.evecs)))
    return pinv_y @ (np.asarray(Pi_YX) @ basis_x.evecs)


def gradient_transfer(shape):
    """``Psi^H M G Phi`` (kq, k): connection coefficients of the LBO eigenfunction gradients."""
    cb, b = shape.cbasis, shape.basis
    return (cb.evecs.conj().T * cb.mass[None, :]) @ (shape.ops.grad @ b.evecs)


def c_to_q(C, shape_x, shape_y, transfer=None):
    """Complex map ``Q = U V^H`` from ``SVD(B A^H)`` with ``A = Psi_X^H M G_X Phi_X``
    and ``B = Psi_Y^H M G_Y Phi_Y C``.

    ``transfer`` may pass the precomputed pair ``(A, Psi_Y^H M G_Y Phi_Y)``.
    """
    A, By = transfer if transfer is not None else (gradient_transfer(shape_x), gradient_transfer(shape_y))
    if A.shape[0] != By.shape[0]:
        raise MapError("connection bases of the two shapes must have the same size")
    if C.shape != (By.shape[1], A.shape[1]):
        raise MapError(f"C has shape {C.shape}, expected {(By.shape[1], A.shape[1])}")
    if isinstance(C, Tensor):
        B = ad.ceinsum("ij,jk->ik", _cconst(By), C)
        X = ad.ceinsum("ij,jk->ik", B, _cconst(A.conj().T))
        _warn_rank(ad.to_complex(X.data))
        return ad.polar(X)
    X = By @ np.asarray(C) @ A.conj().T
    _warn_rank(X)
    return ad.to_complex(ad.polar(_cconst(X)).data)


def _warn_rank(X, rtol=1e-10):
    s = np.linalg.svd(X, compute_uv=False)
    if s[-1] <= rtol * max(s[0], 1e-300):
        warnings.warn("C-to-Q transfer matrix is rank deficient; the unitary factor is not unique",
                      RuntimeWarning, stacklevel=3)
