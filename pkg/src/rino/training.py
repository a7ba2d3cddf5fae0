"""Unsupervised objective, Adam optimiser and the training loop.

The objective of a shape pair (X, Y) combines

* structure: orthogonality of ``C_XY``, ``C_YX``, ``Q_XY``, ``Q_YX`` and
  bijectivity of ``C_XY C_YX`` and ``C_YX C_XY``;
* coupling: agreement of ``C`` with the functional map induced by the soft
  pointwise map, and of ``Q`` with its conversion from that functional map;
* contrast: the soft self-maps of each shape should induce the identity.

All terms are squared Frobenius norms and are evaluated in both directions.
"""
import csv
import logging
import os
from collections import OrderedDict
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import autodiff as ad
from . import maps, rinonet
from .autodiff import Tape, Tensor

logger = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class LossWeights:
    """Term weights and ablation toggles.

    ``qbranch=False`` drops every complex-map term; ``couple_cq=True``
    enables a direct ``||Q - c_to_q(C)||^2`` term weighted by ``cq``.
    """

    lambda1: float = 1.0
    lambda2: float = 0.1
    lambda3: float = 1.0
    lambda4: float = 1.0
    lambda5: float = 0.1
    lambda6: float = 1.0
    cq: float = 1.0
    struct: bool = True
    couple: bool = True
    contr: bool = True
    qbranch: bool = True
    pi_q: bool = True
    couple_cq: bool = False

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, float) and not v >= 0:
                raise ValueError(f"{f.name} must be nonnegative, got {v}")

    def term_weights(self):
        """Weight of every raw term name; disabled terms map to 0."""
        s, c, q = self.struct, self.couple, self.qbranch
        return OrderedDict([
            ("orth_C_XY", self.lambda1 * s), ("orth_C_YX", self.lambda1 * s),
            ("orth_Q_XY", self.lambda2 * (s and q)), ("orth_Q_YX", self.lambda2 * (s and q)),
            ("bij_XY", self.lambda3 * s), ("bij_YX", self.lambda3 * s),
            ("pic_XY", self.lambda4 * c), ("pic_YX", self.lambda4 * c),
            ("piq_XY", self.lambda5 * (c and q and self.pi_q)), ("piq_YX", self.lambda5 * (c and q and self.pi_q)),
            ("contr_X", self.lambda6 * self.contr), ("contr_Y", self.lambda6 * self.contr),
            ("cq_XY", self.cq * (q and self.couple_cq)), ("cq_YX", self.cq * (q and self.couple_cq)),
        ])


ALL_TERMS = tuple(LossWeights().term_weights())


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    steps: int = 200
    seed: int = 0
    tau: float = maps.DEFAULT_TAU
    gamma: float = maps.DEFAULT_GAMMA
    gamma_q: float = maps.DEFAULT_GAMMA_Q
    k: int = 200
    kq: int = 30
    c: int = 42
    blocks: int = 4
    out_dim: int = 256
    mlp_hidden: int = 188
    knn: int = 16
    normalize_pi: bool = True
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    checkpoint: str = None
    checkpoint_every: int = 0
    weights: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        if self.lr < 0 or self.steps < 0 or self.k < 1 or self.kq < 1:
            raise ValueError("learning rate, step count and basis sizes must be positive")
        if self.tau <= 0 or self.gamma < 0 or self.gamma_q < 0:
            raise ValueError("tau must be positive and the regularisers nonnegative")

    def net_config(self):
        return rinonet.NetConfig(self.c, self.blocks, self.out_dim, self.mlp_hidden, self.knn)


# per-shape constants ------------------------------------------------------------

class ShapeContext:
    """A prepared shape plus the constant matrices every step needs."""

    def __init__(self, shape, knn=16):
        self.shape = shape
        self.neighbors = rinonet.shape_neighbors(shape, knn)
        self.G = rinonet.complex_grad_parts(shape.ops.grad)
        self.transfer = maps.gradient_transfer(shape)

    @property
    def basis(self):
        return self.shape.basis

    @property
    def cbasis(self):
        return self.shape.cbasis


# losses ----------------------------------------------------------------------------

def _is_complex(M, square_dims=2):
    return isinstance(M, Tensor) and M.ndim == square_dims + 1 and M.shape[-1] == 2


def _fro2(X):
    return ad.sum(ad.mul(X, X))


def _eye_like(n, complex_=False):
    e = np.eye(n)
    return Tensor(ad.from_complex(e) if complex_ else e)


def loss_orth(M):
    """``||M^H M - I||_F^2``; complex maps are real-pair tensors (k, k, 2)."""
    if isinstance(M, np.ndarray):
        P = M.conj().T @ M
        return float(np.sum(np.abs(P - np.eye(P.shape[0])) ** 2))
    if _is_complex(M):
        P = ad.ceinsum("ji,jk->ik", ad.conj(M), M)
        return _fro2(ad.sub(P, _eye_like(M.shape[1], True)))
    P = ad.matmul(ad.transpose(M), M)
    return _fro2(ad.sub(P, _eye_like(M.shape[1])))


def loss_bij(C1, C2):
    """``||C1 C2 - I||_F^2``."""
    if isinstance(C1, np.ndarray) and isinstance(C2, np.ndarray):
        P = C1 @ C2
        return float(np.sum((P - np.eye(P.shape[0])) ** 2))
    P = ad.matmul(ad.as_tensor(C1), ad.as_tensor(C2))
    return _fro2(ad.sub(P, _eye_like(P.shape[0])))


def loss_diff(M1, M2):
    """``||M1 - M2||_F^2`` (real or real-pair complex)."""
    if isinstance(M1, np.ndarray) and isinstance(M2, np.ndarray):
        return float(np.sum(np.abs(M1 - M2) ** 2))
    return _fro2(ad.sub(ad.as_tensor(M1), ad.as_tensor(M2)))


def loss_self_map(F, basis, tau):
    """``||Phi^T M softmax(F F^T / tau) Phi - I||_F^2`` for one shape."""
    Pi = maps.soft_pointwise(F, F, tau)
    C = maps.pi_to_c(Pi, basis, basis)
    if isinstance(C, np.ndarray):
        return float(np.sum((C - np.eye(C.shape[0])) ** 2))
    return _fro2(ad.sub(C, _eye_like(C.shape[0])))


def row_normalize(F, eps=1e-12):
    """Scale each feature row to unit Euclidean length."""
    if isinstance(F, Tensor):
        n = ad.clamp_min(ad.l2norm(F, axis=1), eps)
        return ad.div(F, ad.expand_vn(n, F.shape[1]))
    F = np.asarray(F, dtype=float)
    return F / np.maximum(np.linalg.norm(F, axis=1, keepdims=True), eps)


def pair_terms(ctx_x, ctx_y, FX, FY, config, weights=None):
    """Raw (unweighted) loss terms of a pair; terms with weight 0 are skipped."""
    weights = weights or config.weights
    w = weights.term_weights()
    need = {k for k, v in w.items() if v > 0}
    bx, by = ctx_x.basis, ctx_y.basis
    out = OrderedDict()
    if not need:
        return out
    want_c = need & {"orth_C_XY", "orth_C_YX", "bij_XY", "bij_YX", "pic_XY", "pic_YX", "cq_XY", "cq_YX"}
    want_q = need & {"orth_Q_XY", "orth_Q_YX", "piq_XY", "piq_YX", "cq_XY", "cq_YX"}
    want_pi = need & {"pic_XY", "pic_YX", "piq_XY", "piq_YX"}
    if want_c:
        A = maps.feature_coeffs(bx, FX)
        B = maps.feature_coeffs(by, FY)
        C_xy = maps.solve_fmap(A, B, bx.evals, by.evals, config.gamma)
        C_yx = maps.solve_fmap(B, A, by.evals, bx.evals, config.gamma)
    if want_q:
        WX = maps.intrinsic_gradient(ctx_x.shape.ops.grad, FX)
        WY = maps.intrinsic_gradient(ctx_y.shape.ops.grad, FY)
        Q_xy = maps.solve_cfmap(WX, WY, ctx_x.cbasis, ctx_y.cbasis, config.gamma_q)
        Q_yx = maps.solve_cfmap(WY, WX, ctx_y.cbasis, ctx_x.cbasis, config.gamma_q)
    if want_pi or need & {"contr_X", "contr_Y"}:
        NX, NY = (row_normalize(FX), row_normalize(FY)) if config.normalize_pi else (FX, FY)
    if want_pi:
        Chat_xy = maps.pi_to_c(maps.soft_pointwise(NY, NX, config.tau), bx, by)
        Chat_yx = maps.pi_to_c(maps.soft_pointwise(NX, NY, config.tau), by, bx)
    for name in w:
        if name not in need:
            continue
        if name == "orth_C_XY":
            out[name] = loss_orth(C_xy)
        elif name == "orth_C_YX":
            out[name] = loss_orth(C_yx)
        elif name == "orth_Q_XY":
            out[name] = loss_orth(Q_xy)
        elif name == "orth_Q_YX":
            out[name] = loss_orth(Q_yx)
        elif name == "bij_XY":
            out[name] = loss_bij(C_xy, C_yx)
        elif name == "bij_YX":
            out[name] = loss_bij(C_yx, C_xy)
        elif name == "pic_XY":
            out[name] = loss_diff(C_xy, Chat_xy)
        elif name == "pic_YX":
            out[name] = loss_diff(C_yx, Chat_yx)
        elif name == "piq_XY":
            out[name] = loss_diff(Q_xy, maps.c_to_q(Chat_xy, None, None, (ctx_x.transfer, ctx_y.transfer)))
        elif name == "piq_YX":
            out[name] = loss_diff(Q_yx, maps.c_to_q(Chat_yx, None, None, (ctx_y.transfer, ctx_x.transfer)))
        elif name == "contr_X":
            out[name] = loss_self_map(NX, bx, config.tau)
        elif name == "contr_Y":
            out[name] = loss_self_map(NY, by, config.tau)
        elif name == "cq_XY":
            out[name] = loss_diff(Q_xy, maps.c_to_q(C_xy, None, None, (ctx_x.transfer, ctx_y.transfer)))
        elif name == "cq_YX":
            out[name] = loss_diff(Q_yx, maps.c_to_q(C_yx, None, None, (ctx_y.transfer, ctx_x.transfer)))
    return out


def combine_terms(terms, weights):
    """Weighted sum of raw terms; returns a Tensor (or float for numpy terms)."""
    w = weights.term_weights()
    total = None
    for name, value in terms.items():
        if w[name] == 0:
            continue
        v = ad.scale(value, w[name]) if isinstance(value, Tensor) else w[name] * value
        total = v if total is None else (ad.add(total, v) if isinstance(v, Tensor) else total + v)
    return Tensor(0.0) if total is None else total


def forward_pair(ctx_x, ctx_y, params, tensors=None, invariant=rinonet.gradient_invariant):
    FX = rinonet.rinonet_forward(ctx_x.shape, params, tensors, ctx_x.neighbors, invariant)
    FY = rinonet.rinonet_forward(ctx_y.shape, params, tensors, ctx_y.neighbors, invariant)
    return FX, FY


def total_loss(ctx_x, ctx_y, params, config, tensors=None, weights=None):
    """Total objective of one pair. Returns ``(total, terms)`` as tensors."""
    weights = weights or config.weights
    FX, FY = forward_pair(ctx_x, ctx_y, params, tensors)
    terms = pair_terms(ctx_x, ctx_y, FX, FY, config, weights)
    return combine_terms(terms, weights), terms


# optimiser ---------------------------------------------------------------------------

@dataclass
class AdamState:
    step: int = 0
    m: "OrderedDict[str, np.ndarray]" = field(default_factory=OrderedDict)
    v: "OrderedDict[str, np.ndarray]" = field(default_factory=OrderedDict)

    @classmethod
    def zeros_like(cls, params):
        return cls(0, OrderedDict((k, np.zeros_like(a)) for k, a in params.arrays.items()),
                   OrderedDict((k, np.zeros_like(a)) for k, a in params.arrays.items()))

    def to_arrays(self):
        out = OrderedDict([("opt.step", np.array([self.step], dtype=float))])
        out.update((f"opt.m.{k}", a) for k, a in self.m.items())
        out.update((f"opt.v.{k}", a) for k, a in self.v.items())
        return out

    @classmethod
    def from_arrays(cls, arrays):
        st = cls(int(arrays["opt.step"][0]))
        for k, a in arrays.items():
            if k.startswith("opt.m."):
                st.m[k[6:]] = np.array(a)
            elif k.startswith("opt.v."):
                st.v[k[6:]] = np.array(a)
        return st


def adam_update(params, grads, state, config):
    """One Adam step; returns new ``(params, state)`` without mutating inputs."""
    t = state.step + 1
    b1, b2 = config.beta1, config.beta2
    new = params.copy()
    m_out, v_out = OrderedDict(), OrderedDict()
    for k, a in params.arrays.items():
        g = grads[k]
        m = b1 * state.m[k] + (1 - b1) * g
        v = b2 * state.v[k] + (1 - b2) * g * g
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        new.arrays[k] = a - config.lr * mhat / (np.sqrt(vhat) + config.eps)
        m_out[k], v_out[k] = m, v
    return new, AdamState(t, m_out, v_out)


def loss_and_grads(ctx_x, ctx_y, params, config, weights=None):
    tensors = params.tensors(requires_grad=True)
    with Tape() as tape:
        total, terms = total_loss(ctx_x, ctx_y, params, config, tensors, weights)
    names = list(tensors)
    if total.requires_grad:
        grads = tape.gradient(total, [tensors[k] for k in names])
    else:
        grads = [np.zeros_like(params.arrays[k]) for k in names]
    values = OrderedDict((k, float(v.data)) for k, v in terms.items())
    return float(total.data), values, dict(zip(names, grads))


def train_step(ctx_x, ctx_y, params, state, config, last_good=None):
    """One Adam update on one pair. Returns ``(params, state, loss, terms)``."""
    where = f"; last good checkpoint: {last_good}" if last_good else ""
    try:
        loss, terms, grads = loss_and_grads(ctx_x, ctx_y, params, config)
    except np.linalg.LinAlgError as exc:
        raise TrainingError(f"non-finite values broke a solve at step {state.step + 1} ({exc}){where}") from None
    if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
        raise TrainingError(f"non-finite loss or gradient at step {state.step + 1}{where}")
    new, state = adam_update(params, grads, state, config)
    return new, state, loss, terms


# loop ------------------------------------------------------------------------------

def pair_order(n_pairs, step, seed):
    """Index of the pair used at ``step``: a seeded permutation per epoch."""
    epoch, pos = divmod(step, n_pairs)
    return int(np.random.default_rng([seed, epoch]).permutation(n_pairs)[pos])


def save_checkpoint(path, params, state, log):
    extra = state.to_arrays()
    extra["opt.log"] = np.array(log, dtype=float).reshape(-1, 2 + len(ALL_TERMS)) if log else np.zeros((0, 2 + len(ALL_TERMS)))
    tmp = path + ".tmp"
    rinonet.save_params(tmp, params, extra)
    os.replace(tmp, path)


def load_checkpoint(path):
    params, extra = rinonet.load_params(path, with_extra=True)
    state = AdamState.from_arrays(extra)
    log = [list(r) for r in np.asarray(extra.get("opt.log", np.zeros((0, 2 + len(ALL_TERMS)))))]
    return params, state, log


def _log_row(step, loss, terms):
    return [float(step), loss] + [terms.get(k, 0.0) for k in ALL_TERMS]


def write_loss_csv(path, log):
    """CSV with columns (step, term, value); term ``total`` holds the weighted sum."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["step", "term", "value"])
        for row in log:
            step = int(row[0])
            wr.writerow([step, "total", repr(float(row[1]))])
            for name, v in zip(ALL_TERMS, row[2:]):
                wr.writerow([step, name, repr(float(v))])


def train_loop(pairs, config, params=None, resume=None, log_csv=None, stop_at=None, callback=None):
    """Train on a list of ``(ShapeContext, ShapeContext)`` pairs.

    ``resume`` names a checkpoint to continue from; the pair order depends
    only on (seed, step), so a resumed run reproduces the uninterrupted one
    bit for bit. ``stop_at`` ends the run early (used to test resumption).
    Returns ``(params, log)`` where each log row is
    ``[step, total, *terms in ALL_TERMS order]``.
    """
    if not pairs:
        raise TrainingError("the training set is empty")
    if resume is not None:
        params, state, log = load_checkpoint(resume)
    else:
        params = params or rinonet.init_params(config.seed, config.net_config())
        state = AdamState.zeros_like(params)
        log = []
    end = config.steps if stop_at is None else min(stop_at, config.steps)
    last_good = resume
    while state.step < end:
        i = pair_order(len(pairs), state.step, config.seed)
        ctx_x, ctx_y = pairs[i]
        params, state, loss, terms = train_step(ctx_x, ctx_y, params, state, config, last_good)
        log.append(_log_row(state.step, loss, terms))
        if callback is not None:
            callback(state.step, loss, terms)
        if config.checkpoint and config.checkpoint_every and state.step % config.checkpoint_every == 0:
            save_checkpoint(config.checkpoint, params, state, log)
            last_good = config.checkpoint
    if config.checkpoint:
        save_checkpoint(config.checkpoint, params, state, log)
    if log_csv:
        write_loss_csv(log_csv, log)
    return params, log


def smoothed(values, window=20):
    """Trailing moving average (shorter windows at the start)."""
    v = np.asarray(values, dtype=float)
    c = np.cumsum(np.insert(v, 0, 0.0))
    idx = np.arange(1, len(v) + 1)
    lo = np.maximum(0, idx - window)
    return (c[idx] - c[lo]) / (idx - lo)


def with_weights(config, **changes):
    return replace(config, weights=replace(config.weights, **changes))
