import warnings

import numpy as np
import pytest

from rino.mesh import gen_synthetic, normalize_unit_area, perturb_gaussian
from rino.operators import prepare_shape


def quiet_prepare(mesh, k, kq):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return prepare_shape(mesh, k, kq)


def random_rotation(rng):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def rel(a, b):
    return float(np.linalg.norm(np.asarray(a) - np.asarray(b)) / max(np.linalg.norm(b), 1e-300))


@pytest.fixture(scope="session")
def blob_mesh():
    m = gen_synthetic("sym_blob", {"subdiv": 2}, seed=0)
    return normalize_unit_area(perturb_gaussian(m, 0.004, 0))


@pytest.fixture(scope="session")
def blob_shape(blob_mesh):
    return quiet_prepare(blob_mesh, 40, 12)


@pytest.fixture(scope="session")
def tiny_pair():
    """Two poses of a bumped bar with 62 vertices (shared labels)."""
    p = dict(n_len=9, n_around=6, taper=0.3, bumps=2, bump_height=0.5)
    a = normalize_unit_area(gen_synthetic("bent_bar", dict(p, angle=0.0), seed=4))
    b = normalize_unit_area(gen_synthetic("bent_bar", dict(p, angle=0.7), seed=4))
    return quiet_prepare(a, 12, 6), quiet_prepare(b, 12, 6)


# acceptance summary -----------------------------------------------------------------

_CRITERIA = {}


def record_criterion(number, name, passed, detail):
    """Print and remember one pass/fail line for the acceptance summary."""
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number:>2}: {name}: {detail}"
    _CRITERIA[number] = line
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[n])
