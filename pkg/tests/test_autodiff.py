import threading

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import sparse

from rino import autodiff as ad
from rino.autodiff import Tape, Tensor

SEEDS = range(20)
TOL = 1e-5


def _w(rng, shape):
    return Tensor(rng.normal(size=shape))


def _dot(y, W):
    return ad.sum(ad.mul(y, W))


class _Basis:
    def __init__(self, rng, n=12, k=5):
        q, _ = np.linalg.qr(rng.normal(size=(n, k)))
        self.mass = rng.uniform(0.5, 1.5, n)
        self.evecs = q / np.sqrt(self.mass)[:, None]
        self.evals = np.sort(rng.uniform(0, 4, k))


# Each case maps an rng to (scalar function, input array).
CASES = {
    "add": lambda r: ((lambda x, W=_w(r, (4, 3)), B=_w(r, (4, 3)): _dot(ad.add(x, B), W)), r.normal(size=(4, 3))),
    "sub": lambda r: ((lambda x, W=_w(r, (4, 3)), B=_w(r, (4, 3)): _dot(ad.sub(B, x), W)), r.normal(size=(4, 3))),
    "scale": lambda r: ((lambda x, W=_w(r, (5,)): _dot(ad.scale(x, -2.5), W)), r.normal(size=5)),
    "mul": lambda r: ((lambda x, W=_w(r, (4, 3)): _dot(ad.mul(x, x), W)), r.normal(size=(4, 3))),
    "div": lambda r: ((lambda x, W=_w(r, (6,)), B=_w(r, (6,)): _dot(ad.div(B, x), W)), r.uniform(0.5, 2, 6)
                      * r.choice([-1, 1], 6)),
    "tanh": lambda r: ((lambda x, W=_w(r, (3, 4)): _dot(ad.tanh(x), W)), r.normal(size=(3, 4))),
    "exp": lambda r: ((lambda x, W=_w(r, (3, 4)): _dot(ad.exp(x), W)), r.normal(size=(3, 4))),
    "clamp_min": lambda r: ((lambda x, W=_w(r, (20,)): _dot(ad.clamp_min(x, 0.1), W)),
                            0.1 + r.uniform(0.05, 1, 20) * r.choice([-1, 1], 20)),
    "expand_vn": lambda r: ((lambda x, W=_w(r, (4, 2, 3)): _dot(ad.expand_vn(x, 3), W)), r.normal(size=(4, 2))),
    "sum": lambda r: ((lambda x, W=_w(r, (4, 1, 2)): _dot(ad.sum(x, axis=1, keepdims=True), W)),
                      r.normal(size=(4, 3, 2))),
    "mean": lambda r: ((lambda x, W=_w(r, (3, 2)): _dot(ad.mean(x, axis=0), W)), r.normal(size=(4, 3, 2))),
    "reshape": lambda r: ((lambda x, W=_w(r, (6, 2)): _dot(ad.reshape(x, (6, 2)), W)), r.normal(size=(3, 4))),
    "transpose": lambda r: ((lambda x, W=_w(r, (2, 4, 3)): _dot(ad.transpose(x, (2, 0, 1)), W)),
                            r.normal(size=(4, 3, 2))),
    "concat": lambda r: ((lambda x, W=_w(r, (4, 4)), B=_w(r, (4, 2)): _dot(ad.concat([x, B, x], axis=1), W)),
                         r.normal(size=(4, 1))),
    "stack": lambda r: ((lambda x, W=_w(r, (3, 2, 2)): _dot(ad.stack([x, ad.tanh(x)], -1), W)),
                        r.normal(size=(3, 2))),
    "getitem": lambda r: ((lambda x, W=_w(r, (5, 3)): _dot(x[np.array([0, 2, 2, 1, 0])], W)),
                          r.normal(size=(3, 3))),
    "matmul": lambda r: ((lambda x, W=_w(r, (4, 2)), B=_w(r, (3, 2)): _dot(ad.matmul(x, B), W)),
                         r.normal(size=(4, 3))),
    "einsum": lambda r: ((lambda x, W=_w(r, (5, 4, 4)), B=_w(r, (4, 2)): _dot(ad.einsum("ij,ncj->nci", B, x), W)),
                         r.normal(size=(5, 4, 2))),
    "spmm": lambda r: ((lambda x, W=_w(r, (6, 2)), S=sparse.random(6, 5, 0.4, random_state=r):
                        _dot(ad.spmm(S, x), W)), r.normal(size=(5, 2))),
    "softmax": lambda r: ((lambda x, W=_w(r, (3, 6)): _dot(ad.softmax(x, 0.3), W)), r.normal(size=(3, 6))),
    "l2norm": lambda r: ((lambda x, W=_w(r, (4, 2)): _dot(ad.l2norm(x, axis=-1), W)), r.normal(size=(4, 2, 3))),
    "real_imag": lambda r: ((lambda x, W=_w(r, (3, 2)): _dot(ad.sub(ad.real(x), ad.scale(ad.imag(x), 2.0)), W)),
                            r.normal(size=(3, 2, 2))),
    "complex_conj": lambda r: ((lambda x, W=_w(r, (3, 2)): _dot(ad.conj(ad.complex_(x, ad.tanh(x))), W)),
                               r.normal(size=3)),
    "ceinsum": lambda r: ((lambda x, W=_w(r, (4, 5, 2)), B=_w(r, (3, 5, 2)): _dot(ad.ceinsum("ij,jk->ik", x, B), W)),
                          r.normal(size=(4, 3, 2))),
    "ceinsum_real": lambda r: ((lambda x, W=_w(r, (5, 3, 2)), B=_w(r, (5, 3, 2)):
                                _dot(ad.ceinsum("ij,kj->ki", x, B), W)), r.normal(size=(3, 3))),
    "cmatmul": lambda r: ((lambda x, W=_w(r, (3, 3, 2)): _dot(ad.cmatmul(x, ad.conj(x)), W)),
                          r.normal(size=(3, 3, 2))),
    "diffusion_u": lambda r: ((lambda x, W=_w(r, (12, 3, 3)), b=_Basis(r), t=Tensor(r.uniform(0.1, 1, 3)):
                               _dot(ad.diffusion(b, x, t), W)), r.normal(size=(12, 3, 3))),
    "diffusion_t": lambda r: ((lambda x, W=_w(r, (12, 2)), b=_Basis(r), u=_w(r, (12, 2)):
                               _dot(ad.diffusion(b, u, x), W)), r.uniform(0.1, 1, 2)),
    "ridge_A": lambda r: ((lambda x, W=_w(r, (4, 5)), B=_w(r, (4, 8)), m=r.uniform(0, 1, (4, 5)):
                           _dot(ad.ridge_solve(x, B, m, 0.3), W)), r.normal(size=(5, 8))),
    "ridge_B": lambda r: ((lambda x, W=_w(r, (4, 5)), A=_w(r, (5, 8)), m=r.uniform(0, 1, (4, 5)):
                           _dot(ad.ridge_solve(A, x, m, 0.3), W)), r.normal(size=(4, 8))),
    "polar": lambda r: ((lambda x, W=_w(r, (4, 4, 2)): _dot(ad.polar(x), W)), r.normal(size=(4, 4, 2))),
}


# every differentiable op the engine registers, and the cases exercising it
REGISTERED_OPS = {
    "add": "add", "sub": "sub", "scale": "scale", "mul": "mul", "div": "div", "tanh": "tanh", "exp": "exp",
    "clamp_min": "clamp_min", "expand_vn": "expand_vn", "sum": "sum", "mean": "mean", "reshape": "reshape",
    "transpose": "transpose", "concat": "concat", "stack": "stack", "getitem": "getitem", "matmul": "matmul",
    "einsum": "einsum", "spmm": "spmm", "softmax": "softmax", "l2norm": "l2norm", "real": "real_imag",
    "imag": "real_imag", "complex_": "complex_conj", "conj": "complex_conj", "ceinsum": "ceinsum_real",
    "cmatmul": "cmatmul", "diffusion": "diffusion_t", "ridge_solve": "ridge_B", "polar": "polar",
}


def test_every_registered_op_has_a_case():
    helpers = {"AutodiffError", "GradCheckReport", "ShapeError", "Tape", "Tensor", "active_tape", "as_tensor",
               "gradient_check", "gradient_check_report", "to_complex", "from_complex"}
    assert set(ad.__all__) - helpers == set(REGISTERED_OPS)
    assert set(REGISTERED_OPS.values()) <= set(CASES)


@pytest.mark.parametrize("name", sorted(CASES))
def test_gradients_match_finite_differences(name):
    worst = 0.0
    for s in SEEDS:
        f, x = CASES[name](np.random.default_rng(1000 + s))
        worst = max(worst, ad.gradient_check(f, x))
    assert worst <= TOL, f"{name}: {worst:.3e}"


@pytest.mark.parametrize("name", ["matmul", "einsum", "ceinsum", "diffusion_u", "spmm"])
def test_linear_ops_backward_is_linear_in_the_seed(name):
    rng = np.random.default_rng(7)
    f, x = CASES[name](rng)
    xt = Tensor(x, requires_grad=True)
    with Tape() as tape:
        y = f(xt)
    g1 = tape.gradient(y, [xt], seed=np.array(2.0))[0]
    g2 = tape.gradient(y, [xt], seed=np.array(1.0))[0]
    np.testing.assert_allclose(g1, 2 * g2, rtol=1e-14)


# tape semantics ---------------------------------------------------------------------

def test_no_tape_means_no_graph():
    a = Tensor(np.ones(3), requires_grad=True)
    b = ad.tanh(a)
    assert b.is_leaf


def test_tape_records_only_when_inputs_require_grad():
    a = Tensor(np.ones(3))
    with Tape() as tape:
        ad.tanh(a)
        assert len(tape.nodes) == 0
        ad.tanh(Tensor(np.ones(3), requires_grad=True))
        assert len(tape.nodes) == 1


def test_backward_accumulates_into_leaves_and_reused_nodes():
    x = Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
    with Tape() as tape:
        y = ad.mul(x, x)
        z = ad.sum(ad.add(y, y))
    tape.backward(z)
    np.testing.assert_allclose(x.grad, 4 * x.data)


def test_gradient_wrt_intermediate():
    x = Tensor(np.array([0.3, -0.4]), requires_grad=True)
    with Tape() as tape:
        y = ad.tanh(x)
        z = ad.sum(ad.mul(y, y))
    gy, gx = tape.gradient(z, [y, x])
    np.testing.assert_allclose(gy, 2 * y.data)
    np.testing.assert_allclose(gx, 2 * y.data * (1 - y.data ** 2))


def test_backward_needs_scalar_or_seed():
    x = Tensor(np.ones(3), requires_grad=True)
    with Tape() as tape:
        y = ad.tanh(x)
    with pytest.raises(ad.AutodiffError):
        tape.backward(y)


def test_tapes_are_thread_local():
    seen = []
    with Tape():
        t = threading.Thread(target=lambda: seen.append(ad.active_tape()))
        t.start()
        t.join()
        assert ad.active_tape() is not None
    assert seen == [None]
    assert ad.active_tape() is None


def test_shape_errors_instead_of_broadcasting():
    with pytest.raises(ad.ShapeError):
        ad.add(Tensor(np.ones((3, 1))), Tensor(np.ones((3, 2))))
    with pytest.raises(ad.ShapeError):
        ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
    with pytest.raises(ad.ShapeError):
        ad.real(Tensor(np.ones((3, 3))))


# special ops: values -------------------------------------------------------------------

def test_polar_is_unitary_and_matches_svd_oracle():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(5, 5)) + 1j * rng.normal(size=(5, 5))
    Q = ad.to_complex(ad.polar(Tensor(ad.from_complex(X))))
    U, _, Vh = np.linalg.svd(X)
    np.testing.assert_allclose(Q, U @ Vh, atol=1e-12)
    np.testing.assert_allclose(Q.conj().T @ Q, np.eye(5), atol=1e-12)


def test_ridge_solve_matches_rowwise_oracle():
    rng = np.random.default_rng(1)
    A, B, m = rng.normal(size=(4, 9)), rng.normal(size=(3, 9)), rng.uniform(0, 1, (3, 4))
    C = ad.ridge_solve(Tensor(A), Tensor(B), m, 0.5).data
    for i in range(3):
        np.testing.assert_allclose(C[i], np.linalg.solve(A @ A.T + 0.5 * np.diag(m[i]), A @ B[i]), atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_softmax_rows_are_distributions(seed):
    x = np.random.default_rng(seed).normal(scale=30, size=(4, 7))
    p = ad.softmax(Tensor(x), 0.07).data
    assert np.all(p >= 0)
    np.testing.assert_allclose(p.sum(-1), 1.0, atol=1e-12)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_gradient_check_reports_nan_sites_and_validates_step():
    rep = ad.gradient_check_report(lambda x: ad.sum(ad.div(Tensor(np.ones(2)), x)), np.array([1.0, 0.0]))
    assert (1,) in rep.nan_sites
    assert np.isnan(ad.gradient_check(lambda x: ad.sum(ad.div(Tensor(np.ones(2)), x)), np.array([1.0, 0.0])))
    with pytest.raises(ValueError):
        ad.gradient_check(lambda x: ad.sum(x), np.ones(2), h=1e-2)


def test_gradient_check_flags_a_wrong_backward():
    def bad(x):
        y = ad.tanh(x)
        y.data = y.data * 1.0
        return ad.sum(ad.scale(y, 1.0))

    def broken(x):
        # value of 2x, gradient of x
        return ad.add(ad.sum(x), Tensor(np.sum(x.data)))

    assert ad.gradient_check(bad, np.ones(3)) < TOL
    assert ad.gradient_check(broken, np.ones(3)) > 0.1
