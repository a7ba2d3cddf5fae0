"""Rotation-equivariant feature extractor built from vector neurons.

Hidden states are (n, c, 3) arrays: c channels of 3-vectors per vertex. A
rotation R of the input acts on them as ``u -> u @ R``; every layer below
commutes with that action except the final invariant layer, which removes
it. All layers operate on ``autodiff.Tensor`` values so the same code runs
for inference and for training.
"""
import hashlib
import json
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from . import autodiff as ad
from . import binfmt
from .autodiff import Tensor
from .mesh import area_centroid, icosphere, knn_graph, normalize_unit_area
from .mesh.core import Mesh

PARAM_MAGIC = b"RINP"
PARAM_VERSION = 1
HK_EPS = 1e-12


@dataclass(frozen=True)
class NetConfig:
    c: int = 42
    blocks: int = 4
    out_dim: int = 256
    mlp_hidden: int = 188
    knn: int = 16

    def __post_init__(self):
        for name in ("c", "blocks", "out_dim", "mlp_hidden", "knn"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive integer")


@dataclass
class NetworkParams:
    """Named parameter arrays plus the configuration and seed that made them."""

    config: NetConfig
    arrays: "OrderedDict[str, np.ndarray]"
    seed: int = 0
    version: int = PARAM_VERSION
    extra: dict = field(default_factory=dict)

    def count(self):
        return int(sum(a.size for a in self.arrays.values()))

    def tensors(self, requires_grad=True):
        return OrderedDict((k, Tensor(v, requires_grad=requires_grad, name=k)) for k, v in self.arrays.items())

    def copy(self):
        return NetworkParams(self.config, OrderedDict((k, v.copy()) for k, v in self.arrays.items()),
                             self.seed, self.version, dict(self.extra))

    def diffusion_times(self, block):
        return np.exp(self.arrays[f"block{block}.theta"])


# parameter layout -------------------------------------------------------------

def param_shapes(config):
    c, h = config.c, config.mlp_hidden
    shapes = OrderedDict()
    shapes["edge.W"] = (c, 2)
    shapes["edge.K"] = (c, c)
    shapes["lift.W"] = (c, c)
    for b in range(config.blocks):
        shapes[f"block{b}.theta"] = (c,)
        shapes[f"block{b}.A"] = (c, c, 2)
        shapes[f"block{b}.W1"] = (h, 3 * c)
        shapes[f"block{b}.K1"] = (h, h)
        shapes[f"block{b}.W2"] = (c, h)
        shapes[f"block{b}.K2"] = (c, c)
    shapes["inv.W1"] = (c, c)
    shapes["inv.K1"] = (c, c)
    shapes["inv.W2"] = (3, c)
    shapes["out.W"] = (config.out_dim, 3 * c)
    return shapes


def count_params(config=None, **kwargs):
    config = config or NetConfig(**kwargs)
    return int(sum(np.prod(s) for s in param_shapes(config).values()))


_REF_T = None


def reference_diffusion_time():
    """Mean squared edge length of a unit-area subdivided icosahedron."""
    global _REF_T
    if _REF_T is None:
        v, f = icosphere(3)
        m = normalize_unit_area(Mesh(v, f))
        _REF_T = float(np.mean(m.edge_lengths() ** 2))
    return _REF_T


def init_params(seed=0, config=None, a_noise=0.01):
    """Deterministic initialisation.

    Weight matrices are Gaussian with fan-in scaling (variance 2 / fan_in
    ahead of a VN-ReLU, 1 / fan_in otherwise); log-times start at the
    reference diffusion time; each complex A starts at the identity plus
    small complex noise.
    """
    config = config or NetConfig()
    rng = np.random.default_rng(seed)
    arrays = OrderedDict()
    theta0 = np.log(reference_diffusion_time())
    for name, shape in param_shapes(config).items():
        kind = name.split(".")[1]
        if kind == "theta":
            arrays[name] = np.full(shape, theta0)
        elif kind == "A":
            a = a_noise * rng.normal(size=shape)
            a[..., 0] += np.eye(shape[0])
            arrays[name] = a
        else:
            gain = 1.0 if name in ("out.W", "inv.W2") else 2.0
            arrays[name] = rng.normal(0.0, np.sqrt(gain / shape[1]), size=shape)
    return NetworkParams(config, arrays, seed=int(seed))


# checkpoint I/O ---------------------------------------------------------------

def _meta_json(params):
    c = params.config
    return json.dumps({"c": c.c, "blocks": c.blocks, "out_dim": c.out_dim, "mlp_hidden": c.mlp_hidden,
                       "knn": c.knn, "seed": params.seed, "version": params.version}, sort_keys=True)


def params_to_arrays(params):
    meta = np.frombuffer(_meta_json(params).encode("utf-8"), dtype=np.uint8).astype(np.float64)
    out = OrderedDict([("meta.json", meta)])
    out.update(params.arrays)
    return out


def params_from_arrays(arrays):
    if "meta.json" not in arrays:
        raise binfmt.ContainerError("parameter file lacks its metadata record")
    meta = json.loads(bytes(np.asarray(arrays["meta.json"], dtype=np.uint8)).decode("utf-8"))
    if meta.get("version") != PARAM_VERSION:
        raise binfmt.VersionMismatch(f"parameter version {meta.get('version')}, expected {PARAM_VERSION}")
    config = NetConfig(meta["c"], meta["blocks"], meta["out_dim"], meta["mlp_hidden"], meta["knn"])
    want = param_shapes(config)
    got = OrderedDict((k, np.array(v)) for k, v in arrays.items() if not k.startswith(("meta.", "opt.")))
    if list(got) != list(want) or any(got[k].shape != want[k] for k in want):
        raise binfmt.ContainerError("parameter records do not match the stored configuration")
    return NetworkParams(config, got, seed=meta["seed"], version=meta["version"])


def _digest(arrays):
    h = hashlib.sha256()
    for k, v in arrays.items():
        h.update(k.encode("utf-8"))
        h.update(np.ascontiguousarray(v, dtype="<f8").tobytes())
    return h.digest()


def save_params(path, params, extra_arrays=None):
    arrays = params_to_arrays(params)
    if extra_arrays:
        arrays.update(extra_arrays)
    return binfmt.write(path, PARAM_MAGIC, PARAM_VERSION, _digest(arrays), arrays)


def load_params(path, with_extra=False):
    _, _, arrays = binfmt.read(path, PARAM_MAGIC, PARAM_VERSION)
    params = params_from_arrays(arrays)
    if with_extra:
        return params, OrderedDict((k, v) for k, v in arrays.items() if k.startswith("opt."))
    return params


# vector-neuron layers -----------------------------------------------------------

def vn_linear(u, W):
    """Channel mixing ``out[..., o, :] = sum_i W[o, i] u[..., i, :]``; no bias."""
    u, W = ad.as_tensor(u), ad.as_tensor(W)
    if u.ndim < 2 or u.shape[-1] != 3 or W.ndim != 2 or W.shape[1] != u.shape[-2]:
        raise ad.ShapeError(f"vn_linear: weights {W.shape} cannot act on features {u.shape}")
    lead = "nkm"[: u.ndim - 2]
    return ad.einsum(f"oc,{lead}cd->{lead}od", W, u)


def vn_relu(u, K):
    """VN-ReLU: remove the component along the learned direction ``k = K u``
    wherever ``<v, k> < 0``."""
    u = ad.as_tensor(u)
    k = vn_linear(u, K)
    dot = ad.sum(ad.mul(u, k), axis=-1)
    kn = ad.clamp_min(ad.l2norm(k, axis=-1), HK_EPS)
    mask = Tensor((dot.data < 0).astype(np.float64))
    coef = ad.mul(mask, ad.div(dot, ad.mul(kn, kn)))
    return ad.sub(u, ad.mul(ad.expand_vn(coef, 3), k))


def vn_mlp(u, stages):
    """Stack of (vn_linear, vn_relu) stages; ``stages`` is a list of (W, K)."""
    for W, K in stages:
        u = vn_relu(vn_linear(u, W), K)
    return u


def edge_features(vertices, neighbors, centroid=None):
    """Per-edge vector pairs ``[x_j - x_i, x_i - centroid]``, shape (n, k, 2, 3)."""
    v = np.asarray(vertices, dtype=float)
    centroid = v.mean(0) if centroid is None else np.asarray(centroid, dtype=float)
    rel = v[neighbors] - v[:, None, :]
    pos = np.broadcast_to((v - centroid)[:, None, :], rel.shape)
    return np.stack([rel, pos], axis=2)


def vn_edgeconv(vertices, neighbors, W, K, centroid=None):
    """Equivariant lift of raw coordinates to (n, c, 3) by mean aggregation."""
    neighbors = np.asarray(neighbors)
    if neighbors.ndim != 2 or neighbors.shape[1] == 0:
        raise ValueError("vn_edgeconv needs a nonempty neighbourhood for every vertex")
    X = Tensor(edge_features(vertices, neighbors, centroid))
    z = vn_relu(vn_linear(X, W), K)  # (n, k, c, 3)
    return ad.mean(z, axis=1)


def vn_diffusion(u, basis, theta):
    """Per-channel heat diffusion with time ``exp(theta)`` shared across VN axes."""
    return ad.diffusion(basis, u, ad.exp(theta))


def gradient_invariant(wr, wi, awr, awi):
    """``sum_d Re(conj(w) * (A w))`` over the VN axis, from real and imaginary parts."""
    return ad.sum(ad.add(ad.mul(wr, awr), ad.mul(wi, awi)), axis=-1)


def complex_grad_parts(G):
    G = sparse.csr_matrix(G)
    return sparse.csr_matrix(G.real), sparse.csr_matrix(G.imag)


def vn_gradient(h, G, A, invariant=gradient_invariant):
    """Rotation-invariant gradient features and their equivariant companion.

    Parameters
    ----------
    h : Tensor (n, c, 3)
    G : complex sparse (n, n) or a pair ``(Re G, Im G)``
    A : Tensor (c, c, 2), complex channel-mixing matrix
    invariant : callable
        Reduction of ``(Re w, Im w, Re Aw, Im Aw)`` to (n, c) scalars.

    Returns
    -------
    g : Tensor (n, c)
        ``tanh`` of the invariant scalars.
    e : Tensor (n, c, 3)
        ``g`` times the unit-normalised ``h``.
    """
    h = ad.as_tensor(h)
    Gr, Gi = G if isinstance(G, tuple) else complex_grad_parts(G)
    if Gr.shape[1] != h.shape[0]:
        raise ad.ShapeError(f"vn_gradient: operator {Gr.shape} does not match features {h.shape}")
    wr, wi = ad.spmm(Gr, h), ad.spmm(Gi, h)
    Ar, Ai = ad.real(A), ad.imag(A)
    mix = "ij,njd->nid"
    awr = ad.sub(ad.einsum(mix, Ar, wr), ad.einsum(mix, Ai, wi))
    awi = ad.add(ad.einsum(mix, Ar, wi), ad.einsum(mix, Ai, wr))
    g = ad.tanh(invariant(wr, wi, awr, awi))
    hn = ad.clamp_min(ad.l2norm(h, axis=-1), HK_EPS)
    e = ad.mul(ad.expand_vn(g, 3), ad.div(h, ad.expand_vn(hn, 3)))
    return g, e


def rino_block(u, basis, G, p, prefix, invariant=gradient_invariant):
    """``d = VN-MLP([u, h, e]) + u`` with ``h`` the diffused input."""
    h = vn_diffusion(u, basis, p[prefix + "theta"])
    _, e = vn_gradient(h, G, p[prefix + "A"], invariant)
    cat = ad.concat([u, h, e], axis=1)
    d = vn_mlp(cat, [(p[prefix + "W1"], p[prefix + "K1"]), (p[prefix + "W2"], p[prefix + "K2"])])
    return ad.add(d, u)


def vn_invariant(u, W1, K1, W2):
    """Project features on a learned equivariant 3-frame; returns (n, 3c)."""
    T = vn_linear(vn_relu(vn_linear(u, W1), K1), W2)  # (n, 3, 3)
    inv = ad.einsum("ncd,nkd->nck", u, T)
    n, c = u.shape[0], u.shape[1]
    return ad.reshape(inv, (n, 3 * c))


def shape_neighbors(shape, k):
    v = shape.mesh.vertices
    return knn_graph(v, min(k, len(v) - 1))


def rinonet_forward(shape, params, tensors=None, neighbors=None, invariant=gradient_invariant, return_hidden=False):
    """Invariant per-vertex features (n, out_dim) of a prepared shape.

    ``tensors`` overrides ``params.arrays`` with autodiff tensors (for
    training); ``neighbors`` may supply a precomputed kNN table.
    """
    cfg = params.config
    p = tensors if tensors is not None else params.tensors(requires_grad=False)
    mesh = shape.mesh
    nb = shape_neighbors(shape, cfg.knn) if neighbors is None else neighbors
    G = complex_grad_parts(shape.ops.grad)
    u = vn_edgeconv(mesh.vertices, nb, p["edge.W"], p["edge.K"], centroid=area_centroid(mesh))
    u = vn_linear(u, p["lift.W"])
    hidden = [u]
    for b in range(cfg.blocks):
        u = rino_block(u, shape.basis, G, p, f"block{b}.", invariant)
        hidden.append(u)
    inv = vn_invariant(u, p["inv.W1"], p["inv.K1"], p["inv.W2"])
    F = ad.matmul(inv, ad.transpose(p["out.W"]))
    return (F, hidden) if return_hidden else F


def features(shape, params, neighbors=None):
    """numpy convenience wrapper around ``rinonet_forward``."""
    return rinonet_forward(shape, params, neighbors=neighbors).data
