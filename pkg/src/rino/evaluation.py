"""Correspondence metrics and evaluation harnesses."""
import csv
import io
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import maps, rinonet
from .mesh import geodesic_matrix, perturb_gaussian
from .operators import prepare_shape

SETTINGS = ("I/I", "I/SO(3)", "SO(3)/SO(3)", "Y/Y")


class EvalError(ValueError):
    pass


# geodesic error -------------------------------------------------------------------

def geo_errors(pred, gt, mesh_y, dist=None):
    """Per-vertex graph-geodesic distance on Y between predicted and true matches."""
    pred = np.asarray(pred, dtype=np.int64)
    gt = np.asarray(gt, dtype=np.int64)
    n = mesh_y.n_vertices
    if pred.shape != gt.shape or pred.ndim != 1:
        raise EvalError(f"prediction {pred.shape} and ground truth {gt.shape} differ in length")
    if len(pred) and (pred.min() < 0 or pred.max() >= n or gt.min() < 0 or gt.max() >= n):
        raise EvalError("match index outside the target mesh")
    if dist is not None:
        return np.asarray(dist)[gt, pred]
    src, inv = np.unique(gt, return_inverse=True)
    D = geodesic_matrix(mesh_y, src)
    return D[inv, pred]


def mean_geo_err(pred, gt, mesh_y, dist=None):
    """Mean geodesic error divided by sqrt(area of Y), times 100.

    Unreachable matches contribute ``inf`` and raise a warning.
    """
    e = geo_errors(pred, gt, mesh_y, dist)
    if not np.all(np.isfinite(e)):
        warnings.warn(f"{int(np.sum(~np.isfinite(e)))} matches are unreachable on the target mesh",
                      RuntimeWarning, stacklevel=2)
    if len(e) == 0:
        return 0.0
    return float(e.mean() / np.sqrt(mesh_y.area) * 100.0)


def count_sym_flips(preds, gts, gts_sym, meshes_y, dists=None):
    """Symmetry-aware errors over a list of pairs.

    Returns ``(err_E, err_ES, flips)``: mean error against the direct
    ground truth, mean of the per-pair minimum over direct and symmetric
    ground truth, and the number of pairs better explained by the symmetric one.
    """
    if not (len(preds) == len(gts) == len(meshes_y)):
        raise EvalError("need one prediction, ground truth and mesh per pair")
    if gts_sym is None or len(gts_sym) != len(preds) or any(s is None for s in gts_sym):
        raise EvalError("a symmetric ground-truth map is required for every pair")
    e_dir, e_min, flips = [], [], 0
    for i, (p, g, s, m) in enumerate(zip(preds, gts, gts_sym, meshes_y)):
        D = None if dists is None else dists[i]
        a = mean_geo_err(p, g, m, D)
        b = mean_geo_err(p, s, m, D)
        e_dir.append(a)
        e_min.append(min(a, b))
        flips += int(b < a)
    return float(np.mean(e_dir)), float(np.mean(e_min)), flips


# rotations --------------------------------------------------------------------------

def random_rotations(n, seed=0, setting="SO(3)"):
    """``n`` rotation matrices: uniform on SO(3) via normalised Gaussian
    quaternions, about the vertical y axis for ``'Y'``, identities for ``'I'``."""
    rng = np.random.default_rng(seed)
    if setting == "I":
        return np.repeat(np.eye(3)[None], n, axis=0)
    if setting == "Y":
        a = rng.uniform(0.0, 2 * np.pi, n)
        c, s = np.cos(a), np.sin(a)
        R = np.zeros((n, 3, 3))
        R[:, 0, 0], R[:, 0, 2], R[:, 1, 1], R[:, 2, 0], R[:, 2, 2] = c, s, 1.0, -s, c
        return R
    if setting != "SO(3)":
        raise EvalError(f"unknown rotation setting {setting!r}")
    q = rng.normal(size=(n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    w, x, y, z = q.T
    return np.stack([
        np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)], -1),
        np.stack([2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)], -1),
        np.stack([2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)], -1),
    ], axis=1)


def rotation_error_deg(R1, R2):
    """Geodesic angle between two rotations, in degrees.

    Uses ``||R1 - R2||_F = 2 sqrt(2) sin(theta / 2)``, which stays accurate
    for tiny angles where the trace formula loses half the digits.
    """
    d = np.linalg.norm(np.asarray(R1, dtype=float) - np.asarray(R2, dtype=float))
    return float(np.degrees(2.0 * np.arcsin(min(d / (2.0 * np.sqrt(2.0)), 1.0))))


# matching ---------------------------------------------------------------------------

def match_meshes(params, mesh_x, mesh_y, k=200, kq=30, shapes=None):
    """Hard map X -> Y by nearest neighbours of the network features."""
    sx, sy = shapes if shapes is not None else (prepare_shape(mesh_x, k, kq), prepare_shape(mesh_y, k, kq))
    return maps.hard_map_nn(rinonet.features(sx, params), rinonet.features(sy, params))


def invariance_report(params, mesh_x, mesh_y, r=10, seed=0, k=200, kq=30, setting="SO(3)"):
    """Fraction of hard matches unchanged when each mesh is rotated independently.

    Returns a dict with the per-rotation fractions and their mean and minimum.
    """
    if r < 1:
        raise EvalError("need at least one rotation sample")
    base = match_meshes(params, mesh_x, mesh_y, k, kq)
    Rx = random_rotations(r, seed, setting)
    Ry = random_rotations(r, seed + 1, setting)
    fr = []
    for a, b in zip(Rx, Ry):
        m = match_meshes(params, mesh_x.rotated(a), mesh_y.rotated(b), k, kq)
        fr.append(float(np.mean(m == base)))
    return {"fractions": fr, "mean": float(np.mean(fr)), "min": float(np.min(fr)), "base": base}


def noise_sweep(params, mesh_x, mesh_y, gt, sigmas, seeds=(0,), k=200, kq=30, csv_path=None):
    """mGeoErr of the X -> Y hard map after Gaussian noise of std ``sigma`` on both meshes.

    Returns rows ``(sigma, seed, mgeoerr)``. Errors are measured on the clean Y.
    """
    D = None
    rows = []
    for sigma in sigmas:
        for seed in seeds:
            px = perturb_gaussian(mesh_x, sigma, 2 * seed)
            py = perturb_gaussian(mesh_y, sigma, 2 * seed + 1)
            pred = match_meshes(params, px, py, k, kq)
            if D is None:
                D = geodesic_matrix(mesh_y)
            rows.append((float(sigma), int(seed), mean_geo_err(pred, gt, mesh_y, D)))
    if csv_path:
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sigma", "seed", "mgeoerr"])
            for s, sd, e in rows:
                w.writerow([repr(s), sd, repr(e)])
    return rows


# rigid registration ------------------------------------------------------------------

def procrustes_align(P, Q, correspondence=None):
    """Rotation ``R`` and translation ``t`` minimising ``||P R^T + t - Q[corr]||``.

    ``correspondence[i]`` is the row of ``Q`` matched to ``P[i]`` (identity
    when omitted). The determinant of ``R`` is forced to +1.
    """
    P = np.asarray(P, dtype=float)
    Q = np.asarray(Q, dtype=float)
    if correspondence is not None:
        Q = Q[np.asarray(correspondence)]
    if P.shape != Q.shape or P.ndim != 2 or P.shape[1] != 3:
        raise EvalError(f"point sets {P.shape} and {Q.shape} are not matched n x 3 arrays")
    if len(P) < 3:
        raise EvalError("need at least three correspondences")
    mp, mq = P.mean(0), Q.mean(0)
    X, Y = P - mp, Q - mq
    sv = np.linalg.svd(X, compute_uv=False)
    if sv[1] <= 1e-12 * max(sv[0], 1e-300):
        raise EvalError("correspondences are collinear; the rotation is not determined")
    U, _, Vt = np.linalg.svd(Y.T @ X)
    d = np.sign(np.linalg.det(U @ Vt)) or 1.0
    R = U @ np.diag([1.0, 1.0, d]) @ Vt
    return R, mq - mp @ R.T


# reports -----------------------------------------------------------------------------

@dataclass
class EvalReport:
    rows: list = field(default_factory=list)  # (pair_id, setting, mgeoerr, flipped)

    def add(self, pair_id, setting, err, flipped=False):
        self.rows.append((str(pair_id), setting, float(err), bool(flipped)))

    def by_setting(self):
        out = {}
        for _, s, e, _ in self.rows:
            out.setdefault(s, []).append(e)
        return {s: float(np.mean(v)) for s, v in out.items()}

    @property
    def mean(self):
        return float(np.mean([r[2] for r in self.rows])) if self.rows else 0.0

    @property
    def flips(self):
        return int(sum(r[3] for r in self.rows))

    def to_csv(self, path=None):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["pair_id", "setting", "mgeoerr", "flipped"])
        for p, s, e, f in self.rows:
            w.writerow([p, s, f"{e:.6f}", int(f)])
        text = buf.getvalue()
        if path:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    def summary(self, label="RINO", settings=SETTINGS):
        """Plain-text table: one column per train/test rotation setting."""
        means = self.by_setting()
        cols = [s for s in settings if s in means] + [s for s in means if s not in settings]
        head = f"{'Train/Test':<14}" + "".join(f"{s:>14}" for s in cols)
        row = f"{label:<14}" + "".join(f"{means[s]:>14.2f}" for s in cols)
        return head + "\n" + row + "\n"


# colour export -----------------------------------------------------------------------

DARK_RED = np.array([139.0, 0.0, 0.0])
WHITE = np.array([255.0, 255.0, 255.0])


def position_colors(vertices):
    """RGB in [0, 255] from bounding-box-normalised coordinates."""
    v = np.asarray(vertices, dtype=float)
    lo, hi = v.min(0), v.max(0)
    span = np.where(hi > lo, hi - lo, 1.0)
    return np.round((v - lo) / span * 255.0).astype(np.uint8)


def transfer_colors(corr, target_vertices):
    """Colour each source vertex with the position colour of its match on the target."""
    return position_colors(target_vertices)[np.asarray(corr, dtype=np.int64)]


def similarity_heatmap(F, vertex):
    """Heat map of feature similarity to ``vertex``: white (dissimilar) to dark red.

    The vertex itself, at distance 0, gets exactly ``DARK_RED``.
    """
    F = np.asarray(F, dtype=float)
    d2 = ((F - F[vertex]) ** 2).sum(1)
    scale = np.median(d2[d2 > 0]) if np.any(d2 > 0) else 1.0
    s = np.exp(-d2 / scale)
    return np.round(WHITE + s[:, None] * (DARK_RED - WHITE)).astype(np.uint8)
