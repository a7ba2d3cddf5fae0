"""Deterministic synthetic shapes with ground-truth vertex labels.

Members of one deformation family share their vertex layout, so the
ground-truth correspondence between two of them is the identity on labels.
"""
import numpy as np

from .core import Mesh

KINDS = ("sphere", "ellipsoid", "bent_bar", "sym_blob")

_PHI = (1.0 + 5.0 ** 0.5) / 2.0


def icosphere(subdiv=2, radius=1.0):
    """Subdivided icosahedron with 10 * 4**subdiv + 2 vertices.

    The base icosahedron is symmetric under x -> -x, and so is every
    subdivision level.
    """
    if not 0 <= subdiv <= 7:
        raise ValueError(f"subdiv must lie in [0, 7], got {subdiv}")
    v = [(-1, _PHI, 0), (1, _PHI, 0), (-1, -_PHI, 0), (1, -_PHI, 0),
         (0, -1, _PHI), (0, 1, _PHI), (0, -1, -_PHI), (0, 1, -_PHI),
         (_PHI, 0, -1), (_PHI, 0, 1), (-_PHI, 0, -1), (-_PHI, 0, 1)]
    f = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
         (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
         (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
         (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    verts = [np.array(p, dtype=float) / np.linalg.norm(p) for p in v]
    faces = f
    for _ in range(subdiv):
        cache = {}

        def mid(a, b):
            key = (a, b) if a < b else (b, a)
            if key not in cache:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new
    return np.array(verts) * radius, np.array(faces, dtype=np.int64)


def _bar_centerline(s, length, angle, center, width):
    """Position, tangent and normal of a bar bent smoothly over [center +- width/2]."""
    s0 = center - width / 2.0
    a = angle * np.clip((s - s0) / width, 0.0, 1.0)
    if angle == 0:
        pos = np.stack([s, np.zeros_like(s), np.zeros_like(s)], -1)
    else:
        kappa = angle / width
        before = np.minimum(s, s0)
        after = np.maximum(s - s0 - width, 0.0)
        px = before + np.sin(a) / kappa + after * np.cos(angle)
        pz = (1.0 - np.cos(a)) / kappa + after * np.sin(angle)
        pos = np.stack([px, np.zeros_like(s), pz], -1)
    tan = np.stack([np.cos(a), np.zeros_like(a), np.sin(a)], -1)
    nrm = np.stack([-np.sin(a), np.zeros_like(a), np.cos(a)], -1)
    return pos, tan, nrm


def bent_bar(angle=0.0, length=6.0, radius=0.2, n_len=40, n_around=12, taper=0.0,
             bumps=0, bump_height=0.5, bend_center=None, bend_width=None, seed=0):
    """Closed tube bent by ``angle`` radians in the x-z plane.

    ``taper`` shrinks the radius linearly towards the far end; ``bumps``
    adds that many seeded radial bumps so the family has no intrinsic
    symmetry. The vertex layout does not depend on ``angle``.
    """
    if not 0.0 <= angle <= np.pi / 2 + 1e-12:
        raise ValueError(f"bend angle must lie in [0, pi/2], got {angle}")
    if n_len < 2 or n_around < 3 or radius <= 0 or length <= 0:
        raise ValueError("bent_bar needs n_len >= 2, n_around >= 3 and positive size")
    if not 0.0 <= taper < 1.0:
        raise ValueError("taper must lie in [0, 1)")
    bend_center = length / 2.0 if bend_center is None else bend_center
    bend_width = length if bend_width is None else bend_width
    s = np.linspace(0.0, length, n_len + 1)
    phi = np.arange(n_around) * (2 * np.pi / n_around)
    S, P = np.meshgrid(s, phi, indexing="ij")
    r = radius * (1.0 - taper * S / length)
    if bumps:
        rng = np.random.default_rng(seed)
        for _ in range(bumps):
            cs, cp = rng.uniform(0.1, 0.9) * length, rng.uniform(0, 2 * np.pi)
            dphi = np.angle(np.exp(1j * (P - cp)))
            r = r * (1.0 + bump_height * np.exp(-((S - cs) / (0.08 * length)) ** 2 - (dphi / 0.6) ** 2))
    pos, tan, nrm = _bar_centerline(s, length, angle, bend_center, bend_width)
    binrm = np.array([0.0, 1.0, 0.0])
    ring = (pos[:, None, :]
            + r[..., None] * (np.cos(P)[..., None] * nrm[:, None, :] + np.sin(P)[..., None] * binrm))
    verts = ring.reshape(-1, 3)
    cap0 = pos[0] - tan[0] * radius * 0.5
    cap1 = pos[-1] + tan[-1] * radius * (1.0 - taper) * 0.5
    verts = np.vstack([verts, cap0, cap1])
    i0, i1 = len(verts) - 2, len(verts) - 1
    idx = np.arange((n_len + 1) * n_around).reshape(n_len + 1, n_around)
    a, b = idx[:-1], np.roll(idx[:-1], -1, axis=1)
    c, d = idx[1:], np.roll(idx[1:], -1, axis=1)
    tris = np.concatenate([np.stack([a, c, b], -1).reshape(-1, 3), np.stack([b, c, d], -1).reshape(-1, 3)])
    first, last = idx[0], idx[-1]
    cap_a = np.stack([np.full(n_around, i0), np.roll(first, -1), first], -1)
    cap_b = np.stack([np.full(n_around, i1), last, np.roll(last, -1)], -1)
    return verts, np.concatenate([tris, cap_a, cap_b])


def sym_blob(subdiv=3, n_bumps=4, amplitude=0.35, bend=0.0, axes=(1.0, 1.4, 0.8), seed=0):
    """Blob that is exactly mirror-symmetric about the plane x = 0.

    ``bend`` rotates the upper half about the x axis (keeping the mirror
    symmetry) to produce near-isometric poses of the same blob.
    """
    if not 0.0 <= bend <= np.pi / 2:
        raise ValueError("bend must lie in [0, pi/2]")
    if amplitude < 0 or n_bumps < 0:
        raise ValueError("amplitude and n_bumps must be nonnegative")
    v, f = icosphere(subdiv)
    rng = np.random.default_rng(seed)
    r = np.ones(len(v))
    for _ in range(n_bumps):
        c = rng.normal(size=3)
        c /= np.linalg.norm(c)
        a = amplitude * rng.uniform(0.4, 1.0)
        w = rng.uniform(0.25, 0.5)
        cm = c * np.array([-1.0, 1.0, 1.0])
        r += a * (np.exp(-((v - c) ** 2).sum(1) / w ** 2) + np.exp(-((v - cm) ** 2).sum(1) / w ** 2))
    v = v * r[:, None] * np.asarray(axes, dtype=float)
    if bend:
        y = v[:, 1]
        t = np.clip((y + 0.2) / 1.0, 0.0, 1.0)
        ang = bend * t * t * (3 - 2 * t)
        cy, cz = np.cos(ang), np.sin(ang)
        v = np.column_stack([v[:, 0], cy * v[:, 1] - cz * v[:, 2], cz * v[:, 1] + cy * v[:, 2]])
    return v, f


def mirror_map(vertices, axis=0, tol=1e-9):
    """Index map sending each vertex to its mirror image across ``axis = 0``."""
    v = np.asarray(vertices, dtype=float)
    m = v.copy()
    m[:, axis] *= -1
    from scipy.spatial import cKDTree

    d, idx = cKDTree(v).query(m)
    if d.max() > tol * max(1.0, np.abs(v).max()):
        raise ValueError("vertex set is not mirror-symmetric")
    return idx.astype(np.int64)


def gen_synthetic(kind, params=None, seed=0):
    """Build a labelled synthetic mesh.

    Parameters
    ----------
    kind : {'sphere', 'ellipsoid', 'bent_bar', 'sym_blob'}
    params : dict, optional
        Keyword arguments of the matching generator (``icosphere``,
        ``bent_bar``, ``sym_blob``); ``ellipsoid`` takes ``subdiv`` and
        ``axes``.
    seed : int
        Seeds every random choice of the generator.
    """
    params = dict(params or {})
    if kind == "sphere":
        v, f = icosphere(params.pop("subdiv", 2), params.pop("radius", 1.0))
    elif kind == "ellipsoid":
        v, f = icosphere(params.pop("subdiv", 2))
        axes = np.asarray(params.pop("axes", (1.0, 0.7, 0.5)), dtype=float)
        if axes.shape != (3,) or np.any(axes <= 0):
            raise ValueError("ellipsoid axes must be three positive numbers")
        v = v * axes
    elif kind == "bent_bar":
        v, f = bent_bar(seed=seed, **params)
        params = {}
    elif kind == "sym_blob":
        v, f = sym_blob(seed=seed, **params)
        params = {}
    else:
        raise ValueError(f"unknown synthetic kind {kind!r}; expected one of {KINDS}")
    if params:
        raise ValueError(f"unknown parameters for {kind}: {sorted(params)}")
    return Mesh(v, f, labels=np.arange(len(v)))
