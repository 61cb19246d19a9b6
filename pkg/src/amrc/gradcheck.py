"""Finite-difference verification of the analytic objective gradient.

Central differences of the frozen objective (selection, beta and masked
targets pinned) are the independent oracle. The comparison is per
coordinate:

    rel_j = |g_j - fd_j| / max(|g_j|, |fd_j|, floor),
    floor = floor_frac * ||fd||_inf

The floor guards coordinates orders of magnitude below the gradient scale,
where the O(h^2) truncation of the difference quotient dominates any
relative comparison long before implementation errors would. A genuine
backprop defect (wrong factor, dropped term, bad sign) perturbs coordinates
in proportion to their size and still trips the check.
"""

from __future__ import annotations

import numpy as np

from . import forecaster, masking, objectives
from .errors import ValidationError

PARAM_BUDGET = 5000


def central_diff_grad(frozen, model, h: float = 1e-3, coords=None) -> np.ndarray:
    """Central finite differences of frozen.value over the flat params.

    coords selects a subset of coordinates (all by default); entries outside
    the subset are returned as nan."""
    p0 = forecaster.get_params(model)
    if coords is None:
        coords = range(p0.size)
    fd = np.full(p0.size, np.nan)
    work = p0.copy()
    try:
        for j in coords:
            work[j] = p0[j] + h
            forecaster.set_params(model, work)
            up = frozen.value(model)
            work[j] = p0[j] - h
            forecaster.set_params(model, work)
            down = frozen.value(model)
            work[j] = p0[j]
            fd[j] = (up - down) / (2.0 * h)
    finally:
        forecaster.set_params(model, p0)
    return fd


def max_rel_error(
    analytic: np.ndarray, fd: np.ndarray, floor_frac: float = 1e-2
) -> float:
    mask = ~np.isnan(fd)
    a = analytic[mask]
    b = fd[mask]
    floor = floor_frac * max(float(np.abs(b).max()), 1e-12)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float((np.abs(a - b) / denom).max())


def run_gradcheck(
    kind: str,
    L: int,
    H: int,
    D: int,
    E: int = 0,
    seed: int = 0,
    lam_aml: float = 1.0,
    lam_esp: float = 1.0,
    m: int = 6,
    n: int = 8,
    h: float = 1e-3,
    masked_branch_grad: bool = False,
    corrupt: bool = False,
) -> float:
    """Build a random batch, enable the requested loss terms and compare the
    analytic gradient against central differences over every coordinate.

    Returns the max relative error. corrupt deliberately perturbs one
    analytic gradient entry (negative-control hook for the test suite).
    """
    p = forecaster.param_count(kind, L, H, E)
    if p > PARAM_BUDGET:
        raise ValidationError(
            f"{p} parameters exceed the finite-difference budget of {PARAM_BUDGET}"
        )
    if kind == "linear":
        model = forecaster.new_linear(L, H, D, seed)
    else:
        model = forecaster.new_tinymlp(L, H, D, E, seed)
    rng = np.random.default_rng(seed + 1)
    X = rng.standard_normal((n, L, D))
    Y = rng.standard_normal((n, H, D))
    ks = masking.sample_mask_indices(m, L, rng) if lam_aml > 0 else None
    obj = objectives.BatchObjective(
        X,
        Y,
        ks=ks,
        lam_aml=lam_aml,
        lam_esp=lam_esp,
        masked_branch_grad=masked_branch_grad,
    )
    grad = forecaster.loss_gradient(model, obj)
    if corrupt:
        grad = grad.copy()
        grad[0] += 1.0
    fd = central_diff_grad(obj.freeze(model), model, h=h)
    return max_rel_error(grad, fd)
