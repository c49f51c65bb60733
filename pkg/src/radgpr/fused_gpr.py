"""Fusing an agent's local predictions with its consensus-based global ones.

Only common points where the global estimate is strictly more certain than the
local one (on both tracked variances) are used. Each test point is corrected
through its nearest such point, with a surrogate cross-covariance
``g(z*, t) * k(z*, z_agg)`` that keeps the 2x2 joint covariance positive definite.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .distributed_gpr import GlobalPrediction
from .kernel import FusionConstants, Kernel
from .local_gpr import sq_dists


class FusionError(ValueError):
    pass


@dataclass(frozen=True)
class FusionTrace:
    agg_index: np.ndarray  # chosen active point per test point, as an index into Z_agg
    g: np.ndarray
    v: np.ndarray
    mu_prime: np.ndarray


@dataclass(frozen=True)
class FusedPrediction:
    mu_tilde: np.ndarray
    var_tilde: np.ndarray
    active_set: np.ndarray  # indices into Z_agg
    trace: FusionTrace | None
    gamma: np.ndarray  # local variance minus fused variance


def select_active(local_var_agg, glob: GlobalPrediction) -> np.ndarray:
    """Indices of common points where both global variances are strictly below the local one."""
    local_var_agg = np.asarray(local_var_agg, dtype=float)
    if not (local_var_agg.shape == glob.var_hat.shape == glob.var_ave.shape):
        raise FusionError("local and global vectors are not aligned with Z_agg")
    mask = (glob.var_hat < local_var_agg) & (glob.var_ave < local_var_agg)
    return np.flatnonzero(mask)


def g_factor(kernel: Kernel, consts: FusionConstants, i: int, var_star, var_agg):
    """``min(var_star, var_agg) * max(0, c - psi_i) / k(z*, z*)**2``."""
    s = kernel.sigma_f_sq
    return np.minimum(var_star, var_agg) * consts.gate(i) / (s * s)


def fuse_point(
    z_star,
    z_agg: np.ndarray,
    active: np.ndarray,
    local_star: tuple[float, float],
    local_agg: tuple[np.ndarray, np.ndarray],
    glob: GlobalPrediction,
    kernel: Kernel,
    consts: FusionConstants,
    i: int,
) -> tuple[float, float, dict]:
    """Fuse a single test point; ``active`` must be non-empty.

    Returns ``(mu_tilde, var_tilde, trace)`` where the trace records the
    chosen common point, ``g``, ``v`` and ``mu'``.
    """
    active = np.asarray(active, dtype=int)
    if active.size == 0:
        raise FusionError("fuse_point needs a non-empty active set")
    z_star = np.asarray(z_star, dtype=float).reshape(1, -1)
    d2 = sq_dists(z_star, z_agg[active])[0]
    j = int(active[int(np.argmin(d2))])
    mu_star, var_star = local_star
    mu_loc, var_loc = local_agg
    g = float(g_factor(kernel, consts, i, var_star, var_loc[j]))
    g_star = g * float(kernel.kappa_sq(d2.min()))
    v = g_star / var_loc[j]
    mu_prime = glob.mu_hat[j] - mu_loc[j]
    mu_t = v * mu_prime + mu_star
    var_t = var_star + v * v * (glob.var_hat[j] - var_loc[j])
    return float(mu_t), float(var_t), {"agg_index": j, "g": g, "v": v, "mu_prime": float(mu_prime)}


def fuse(
    z_star: np.ndarray,
    z_agg: np.ndarray,
    agg_index: np.ndarray,
    local_mean: np.ndarray,
    local_var: np.ndarray,
    glob: GlobalPrediction,
    kernel: Kernel,
    consts: FusionConstants,
    i: int,
) -> FusedPrediction:
    """Vectorised fusion over every test point.

    ``agg_index`` gives the position of each common point within ``z_star``,
    so local predictions on Z_agg are read from the Z* vectors.
    """
    local_mean = np.asarray(local_mean, dtype=float)
    local_var = np.asarray(local_var, dtype=float)
    mu_loc = local_mean[agg_index]
    var_loc = local_var[agg_index]
    active = select_active(var_loc, glob)
    if active.size == 0:
        return FusedPrediction(local_mean.copy(), local_var.copy(), active, None, np.zeros_like(local_var))
    d2 = sq_dists(z_star, z_agg[active])
    pick = np.argmin(d2, axis=1)  # first minimum -> earliest in Z_agg order
    j = active[pick]
    rho_sq = d2[np.arange(len(z_star)), pick]
    g = g_factor(kernel, consts, i, local_var, var_loc[j])
    g_star = g * kernel.kappa_sq(rho_sq)
    v = g_star / var_loc[j]
    mu_prime = glob.mu_hat[j] - mu_loc[j]
    mu_t = v * mu_prime + local_mean
    var_t = local_var + v * v * (glob.var_hat[j] - var_loc[j])
    trace = FusionTrace(agg_index=j, g=g, v=v, mu_prime=mu_prime)
    return FusedPrediction(mu_t, var_t, active, trace, local_var - var_t)
