"""Built-in equivariance, gradient and oracle checks on small synthetic meshes."""
import time
import warnings
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import maps, rinonet
from .autodiff import Tensor
from .evaluation import random_rotations
from .mesh import gen_synthetic, normalize_unit_area, perturb_gaussian
from .operators import eig_generalized, prepare_shape


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    limit: float
    seconds: float

    def line(self):
        tag = "PASS" if self.passed else "FAIL"
        return f"[{tag}] {self.name}: {self.value:.3e} (limit {self.limit:.0e}, {self.seconds:.1f}s)"


def _rel(a, b):
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def _small_shape(seed=0, subdiv=2, k=40, kq=12):
    m = normalize_unit_area(perturb_gaussian(gen_synthetic("sym_blob", {"subdiv": subdiv}, seed=seed), 0.004, seed))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return prepare_shape(m, k, kq)


def check_gradient_invariant(invariant=rinonet.gradient_invariant, n_rot=100, seed=0):
    """Rotating the gradient field leaves the invariant reduction unchanged."""
    rng = np.random.default_rng(seed)
    n, c = 50, 6
    w = rng.normal(size=(n, c, 3)) + 1j * rng.normal(size=(n, c, 3))
    A = rng.normal(size=(c, c)) + 1j * rng.normal(size=(c, c))

    def f(wc):
        aw = np.einsum("ij,njd->nid", A, wc)
        return invariant(Tensor(wc.real), Tensor(wc.imag), Tensor(aw.real), Tensor(aw.imag)).data

    base = f(w)
    return max(_rel(f(w @ R), base) for R in random_rotations(n_rot, seed + 1))


def check_layers(n_rot=5, seed=0, invariant=rinonet.gradient_invariant):
    """Worst relative equivariance defect over the VN layers and one block."""
    sh = _small_shape(seed)
    cfg = rinonet.NetConfig(c=6, blocks=1, out_dim=8, mlp_hidden=7)
    p = rinonet.init_params(seed, cfg).tensors(False)
    rng = np.random.default_rng(seed)
    n = sh.n
    u = rng.normal(size=(n, 6, 3))
    G = rinonet.complex_grad_parts(sh.ops.grad)
    nb = rinonet.shape_neighbors(sh, cfg.knn)
    V = sh.mesh.vertices
    layers = {
        "vn_linear": lambda x: rinonet.vn_linear(Tensor(x), p["lift.W"]).data,
        "vn_relu": lambda x: rinonet.vn_relu(Tensor(x), p["edge.K"]).data,
        "vn_diffusion": lambda x: rinonet.vn_diffusion(Tensor(x), sh.basis, p["block0.theta"]).data,
        "rino_block": lambda x: rinonet.rino_block(Tensor(x), sh.basis, G, p, "block0.", invariant).data,
    }
    worst = 0.0
    for R in random_rotations(n_rot, seed + 7):
        for fn in layers.values():
            worst = max(worst, _rel(fn(u @ R), fn(u) @ R))
        e0 = rinonet.vn_edgeconv(V, nb, p["edge.W"], p["edge.K"]).data
        e1 = rinonet.vn_edgeconv(V @ R, nb, p["edge.W"], p["edge.K"]).data
        worst = max(worst, _rel(e1, e0 @ R))
    return worst


def check_network(n_rot=3, seed=0, invariant=rinonet.gradient_invariant):
    sh = _small_shape(seed)
    cfg = rinonet.NetConfig(c=8, blocks=2, out_dim=16, mlp_hidden=10)
    params = rinonet.init_params(seed, cfg)
    F = rinonet.rinonet_forward(sh, params, invariant=invariant).data
    worst = 0.0
    for R in random_rotations(n_rot, seed + 3):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            shR = prepare_shape(sh.mesh.rotated(R), sh.basis.k, sh.cbasis.k)
        FR = rinonet.rinonet_forward(shR, params, invariant=invariant).data
        worst = max(worst, _rel(FR, F))
    return worst


def check_gradients(seed=0):
    rng = np.random.default_rng(seed)
    W = Tensor(rng.normal(size=(5, 4)))
    A = rng.normal(size=(6, 9))
    B = Tensor(rng.normal(size=(5, 9)))
    mask = rng.uniform(size=(5, 6))
    X = rng.normal(size=(4, 4, 2))
    G = Tensor(rng.normal(size=(4, 4, 2)))
    Wc = Tensor(rng.normal(size=(5, 6)))
    cases = [
        (lambda x: ad.sum(ad.mul(ad.softmax(x, 0.5), W)), rng.normal(size=(5, 4))),
        (lambda x: ad.sum(ad.mul(ad.tanh(x), W)), rng.normal(size=(5, 4))),
        (lambda x: ad.sum(ad.mul(ad.ridge_solve(x, B, mask, 0.2), Wc)), A),
        (lambda x: ad.sum(ad.mul(ad.polar(x), G)), X),
    ]
    return max(ad.gradient_check(f, x) for f, x in cases)


def check_solvers(seed=0):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(6, 10))
    B = rng.normal(size=(5, 10))
    lx, ly = np.sort(rng.uniform(0, 5, 6)), np.sort(rng.uniform(0, 5, 5))
    C = maps.solve_fmap(A, B, lx, ly, 0.3)
    D = maps.spectral_mask(lx, ly)
    ref = np.stack([np.linalg.solve(A @ A.T + 0.3 * np.diag(D[i]), A @ B[i]) for i in range(5)])
    sh = _small_shape(seed)
    Q = maps.c_to_q(np.eye(sh.basis.k), sh, sh)
    return max(float(np.abs(C - ref).max()), float(np.abs(Q.conj().T @ Q - np.eye(len(Q))).max()))


def check_eigen(seed=0):
    sh = _small_shape(seed, subdiv=3, k=60)
    b = eig_generalized(sh.ops.stiffness, sh.ops.mass, 60, seed)
    r = sh.ops.stiffness @ b.evecs - (sh.ops.mass[:, None] * b.evecs) * b.evals
    orth = b.evecs.T @ (sh.ops.mass[:, None] * b.evecs) - np.eye(60)
    return max(float(np.abs(r).max()), float(np.abs(orth).max()))


def run_selfcheck(invariant=rinonet.gradient_invariant, seed=0, out=print):
    """Run every check; returns the list of ``CheckResult`` (printing one line each)."""
    suite = [
        ("gradient invariant (100 rotations)", lambda: check_gradient_invariant(invariant, seed=seed), 1e-10),
        ("VN layer equivariance", lambda: check_layers(seed=seed, invariant=invariant), 1e-9),
        ("end-to-end rotation invariance", lambda: check_network(seed=seed, invariant=invariant), 1e-4),
        ("autodiff finite differences", lambda: check_gradients(seed), 1e-5),
        ("map solver oracles", lambda: check_solvers(seed), 1e-10),
        ("eigensolver residual", lambda: check_eigen(seed), 1e-8),
    ]
    results = []
    for name, fn, limit in suite:
        t = time.perf_counter()
        v = float(fn())
        r = CheckResult(name, bool(np.isfinite(v) and v <= limit), v, limit, time.perf_counter() - t)
        results.append(r)
        if out:
            out(r.line())
    return results
