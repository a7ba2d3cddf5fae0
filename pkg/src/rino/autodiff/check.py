"""Finite-difference gradient checking."""
from dataclasses import dataclass, field

import numpy as np

from .tensor import Tape, Tensor


@dataclass
class GradCheckReport:
    max_rel_err: float
    n_checked: int
    worst_index: tuple = None
    nan_sites: list = field(default_factory=list)


def gradient_check_report(f, x, h=1e-6, max_coords=256, seed=0, rel_floor=1e-3):
    """Compare the tape gradient of scalar ``f(x)`` with central differences.

    Each checked coordinate contributes ``|a - n| / max(|a|, |n|, s)`` where
    ``s = rel_floor * max(|grad|)``; coordinates with a negligible gradient
    are thus judged against the overall gradient scale instead of against
    their own roundoff. Up to ``max_coords`` coordinates are sampled.
    """
    if not 1e-8 <= h <= 1e-4:
        raise ValueError("finite-difference step must lie in [1e-8, 1e-4]")
    x0 = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    xt = Tensor(x0.copy(), requires_grad=True)
    with Tape() as tape:
        y = f(xt)
    if y.data.size != 1:
        raise ValueError("gradient_check needs a scalar-valued function")
    (grad,) = tape.gradient(y, [xt])

    def value(v):
        return float(f(Tensor(v)).data)

    flat = np.arange(x0.size)
    if x0.size > max_coords:
        flat = np.sort(np.random.default_rng(seed).choice(x0.size, max_coords, replace=False))
    num = np.empty(len(flat))
    for j, i in enumerate(flat):
        xp = x0.copy().reshape(-1)
        xm = x0.copy().reshape(-1)
        xp[i] += h
        xm[i] -= h
        num[j] = (value(xp.reshape(x0.shape)) - value(xm.reshape(x0.shape))) / (2 * h)
    ana = grad.reshape(-1)[flat]
    scale = rel_floor * max(np.nanmax(np.abs(grad)) if grad.size else 0.0, np.nanmax(np.abs(num)), 1e-300)
    err = np.abs(ana - num) / np.maximum(np.maximum(np.abs(ana), np.abs(num)), scale)
    bad = ~np.isfinite(err)
    nan_sites = [tuple(np.unravel_index(flat[j], x0.shape)) for j in np.flatnonzero(bad)]
    if bad.all():
        return GradCheckReport(float("nan"), len(flat), None, nan_sites)
    j = int(np.nanargmax(np.where(bad, -np.inf, err)))
    worst = float(err[j]) if not nan_sites else float("nan")
    return GradCheckReport(worst, len(flat), tuple(np.unravel_index(flat[j], x0.shape)), nan_sites)


def gradient_check(f, x, h=1e-6, max_coords=256, seed=0):
    """Maximum relative error between the tape gradient and central differences.

    Returns NaN when any checked coordinate produced a non-finite value; use
    ``gradient_check_report`` to list those sites.
    """
    return gradient_check_report(f, x, h, max_coords, seed).max_rel_err
