"""Differentiable operations.

Every op validates shapes, computes its forward value with numpy and, when
a tape is active and some input requires gradients, records a closure that
maps the output gradient to one gradient per input (``None`` when the input
is constant). Elementwise ops require identical shapes; the only implicit
broadcast is ``expand_vn``, which repeats a channel value across the VN axis.
"""
import numpy as np
from scipy import sparse

from .tensor import Tensor, active_tape, as_tensor


class ShapeError(ValueError):
    pass


def _finish(data, inputs, backward, op):
    needs = any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=needs)
    tape = active_tape()
    if needs and tape is not None:
        tape.record(out, inputs, backward, op)
    return out


def _same(a, b, op):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


# elementwise ----------------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _same(a, b, "add")
    return _finish(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _same(a, b, "sub")
    return _finish(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def scale(a, s):
    a = as_tensor(a)
    s = float(s)
    return _finish(a.data * s, (a,), lambda g: (g * s,), "scale")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _same(a, b, "mul")
    ad, bd = a.data, b.data
    return _finish(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul")


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _same(a, b, "div")
    ad, bd = a.data, b.data
    y = ad / bd
    return _finish(y, (a, b), lambda g: (g / bd, -g * y / bd), "div")


def tanh(a):
    a = as_tensor(a)
    y = np.tanh(a.data)
    return _finish(y, (a,), lambda g: (g * (1.0 - y * y),), "tanh")


def exp(a):
    a = as_tensor(a)
    y = np.exp(a.data)
    return _finish(y, (a,), lambda g: (g * y,), "exp")


def clamp_min(a, lo):
    """max(a, lo); the gradient is passed where a > lo."""
    a = as_tensor(a)
    keep = a.data > lo
    return _finish(np.where(keep, a.data, lo), (a,), lambda g: (g * keep,), "clamp_min")


def expand_vn(a, k=3):
    """Repeat an (..., c) tensor along a new trailing VN axis of size k."""
    a = as_tensor(a)
    y = np.repeat(a.data[..., None], k, axis=-1)
    return _finish(y, (a,), lambda g: (g.sum(-1),), "expand_vn")


# reductions and reshaping ---------------------------------------------------

def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    axes = (axis,) if np.isscalar(axis) else tuple(axis)
    out = []
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise ShapeError(f"axis {ax} out of range for ndim {ndim}")
        out.append(ax % ndim)
    return tuple(sorted(out))


def sum(a, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    y = a.data.sum(axis=axes, keepdims=keepdims)
    shape = a.shape

    def back(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).copy(),)

    return _finish(y, (a,), back, "sum")


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    count = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    return scale(sum(a, axis, keepdims), 1.0 / count)


def reshape(a, shape):
    a = as_tensor(a)
    shape = tuple(int(s) for s in shape)
    old = a.shape
    try:
        y = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: {exc}") from None
    return _finish(y, (a,), lambda g: (g.reshape(old),), "reshape")


def transpose(a, axes=None):
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ShapeError(f"transpose: invalid axes {axes} for ndim {a.ndim}")
    inv = tuple(np.argsort(axes))
    return _finish(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),), "transpose")


def concat(tensors, axis=0):
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeError("concat of an empty list")
    nd = ts[0].ndim
    ax = axis % nd
    for t in ts[1:]:
        if t.ndim != nd or any(t.shape[i] != ts[0].shape[i] for i in range(nd) if i != ax):
            raise ShapeError(f"concat: incompatible shapes {[t.shape for t in ts]} on axis {axis}")
    y = np.concatenate([t.data for t in ts], axis=ax)
    cuts = np.cumsum([t.shape[ax] for t in ts])[:-1]
    return _finish(y, ts, lambda g: tuple(np.split(g, cuts, axis=ax)), "concat")


def stack(tensors, axis=-1):
    ts = [as_tensor(t) for t in tensors]
    for t in ts[1:]:
        if t.shape != ts[0].shape:
            raise ShapeError(f"stack: shapes {[t.shape for t in ts]} differ")
    y = np.stack([t.data for t in ts], axis=axis)
    ax = axis % y.ndim
    return _finish(y, ts, lambda g: tuple(np.moveaxis(g, ax, 0)), "stack")


def getitem(a, key):
    a = as_tensor(a)
    y = a.data[key]
    shape = a.shape

    def back(g):
        full = np.zeros(shape)
        np.add.at(full, key, g)
        return (full,)

    return _finish(np.array(y, dtype=np.float64), (a,), back, "getitem")


# linear algebra -------------------------------------------------------------

def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    ad, bd = a.data, b.data
    return _finish(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g), "matmul")


def _parse_einsum(subs):
    lhs, out = subs.replace(" ", "").split("->")
    ins = lhs.split(",")
    if len(ins) != 2:
        raise ShapeError("einsum supports exactly two operands")
    return ins[0], ins[1], out


def einsum(subs, a, b):
    """Two-operand einsum without repeated indices inside one operand."""
    a, b = as_tensor(a), as_tensor(b)
    sa, sb, so = _parse_einsum(subs)
    if len(sa) != a.ndim or len(sb) != b.ndim:
        raise ShapeError(f"einsum {subs!r}: operand ranks {a.ndim}, {b.ndim} do not match")
    dims = {}
    for s, t in ((sa, a), (sb, b)):
        if len(set(s)) != len(s):
            raise ShapeError(f"einsum {subs!r}: repeated index within an operand")
        for ch, n in zip(s, t.shape):
            if dims.setdefault(ch, n) != n:
                raise ShapeError(f"einsum {subs!r}: index {ch!r} has sizes {dims[ch]} and {n}")
    ad, bd = a.data, b.data
    y = np.einsum(subs, ad, bd, optimize=True)

    def back(g):
        ga = gb = None
        if a.requires_grad:
            ga = np.einsum(f"{so},{sb}->{sa}", g, bd, optimize=True) if set(sa) <= set(so + sb) else None
            if ga is None:
                raise ShapeError(f"einsum {subs!r}: index summed out of a alone is unsupported")
        if b.requires_grad:
            gb = np.einsum(f"{so},{sa}->{sb}", g, ad, optimize=True) if set(sb) <= set(so + sa) else None
            if gb is None:
                raise ShapeError(f"einsum {subs!r}: index summed out of b alone is unsupported")
        return ga, gb

    return _finish(y, (a, b), back, "einsum")


def spmm(S, x):
    """Constant sparse (or dense) real matrix times tensor along axis 0."""
    x = as_tensor(x)
    if S.shape[1] != x.shape[0]:
        raise ShapeError(f"spmm: {S.shape} cannot act on {x.shape}")
    rest = x.shape[1:]
    x2 = x.data.reshape(x.shape[0], -1)
    y = np.asarray(S @ x2).reshape((S.shape[0],) + rest)
    St = S.T.tocsr() if sparse.issparse(S) else S.T

    def back(g):
        return (np.asarray(St @ g.reshape(S.shape[0], -1)).reshape(x.shape),)

    return _finish(y, (x,), back, "spmm")


def softmax(a, tau=1.0):
    """Row softmax of a / tau over the last axis."""
    a = as_tensor(a)
    if tau <= 0:
        raise ValueError("softmax temperature must be positive")
    z = a.data / tau
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        return ((y * (g - (g * y).sum(-1, keepdims=True))) / tau,)

    return _finish(y, (a,), back, "softmax")


def l2norm(a, axis=-1, keepdims=False):
    """Euclidean norm along ``axis``; the gradient at a zero vector is zero."""
    a = as_tensor(a)
    ax = axis % a.ndim
    n = np.sqrt((a.data ** 2).sum(axis=ax, keepdims=True))
    ad = a.data
    y = n if keepdims else n.squeeze(ax)

    def back(g):
        gk = g if keepdims else np.expand_dims(g, ax)
        safe = np.where(n > 0, n, 1.0)
        return (np.where(n > 0, gk * ad / safe, 0.0),)

    return _finish(y, (a,), back, "l2norm")


# complex tensors: trailing axis of size 2 holds (re, im) --------------------

def _check_complex(z, op):
    if z.ndim == 0 or z.shape[-1] != 2:
        raise ShapeError(f"{op}: complex tensor needs a trailing axis of size 2, got {z.shape}")


def real(z):
    z = as_tensor(z)
    _check_complex(z, "real")
    return getitem(z, (Ellipsis, 0))


def imag(z):
    z = as_tensor(z)
    _check_complex(z, "imag")
    return getitem(z, (Ellipsis, 1))


def complex_(re, im):
    return stack([re, im], axis=-1)


def conj(z):
    """Complex conjugate; its adjoint is conjugation of the gradient pair."""
    z = as_tensor(z)
    _check_complex(z, "conj")
    sign = np.array([1.0, -1.0])
    return _finish(z.data * sign, (z,), lambda g: (g * sign,), "conj")


def ceinsum(subs, a, b):
    """Complex two-operand einsum; either operand may be real (no trailing 2)."""
    a, b = as_tensor(a), as_tensor(b)
    sa, sb, _ = _parse_einsum(subs)
    ca, cb = a.ndim == len(sa) + 1, b.ndim == len(sb) + 1
    if ca:
        _check_complex(a, "ceinsum")
    if cb:
        _check_complex(b, "ceinsum")
    if ca and cb:
        ar, ai, br, bi = real(a), imag(a), real(b), imag(b)
        re = sub(einsum(subs, ar, br), einsum(subs, ai, bi))
        im = add(einsum(subs, ar, bi), einsum(subs, ai, br))
    elif ca:
        re, im = einsum(subs, real(a), b), einsum(subs, imag(a), b)
    elif cb:
        re, im = einsum(subs, a, real(b)), einsum(subs, a, imag(b))
    else:
        raise ShapeError("ceinsum needs at least one complex operand")
    return complex_(re, im)


def cmatmul(a, b):
    return ceinsum("ij,jk->ik", a, b)


def to_complex(z):
    """numpy complex view of a (..., 2) array."""
    z = np.asarray(z.data if isinstance(z, Tensor) else z)
    return z[..., 0] + 1j * z[..., 1]


def from_complex(z):
    z = np.asarray(z)
    return np.stack([z.real, z.imag], axis=-1)
