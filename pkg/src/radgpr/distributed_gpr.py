"""Global predictions read off consensus states, and the centralized PoE oracle."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .consensus import ConsensusState


class DegenerateStateError(ValueError):
    pass


@dataclass(frozen=True)
class GlobalPrediction:
    mu_hat: np.ndarray
    var_hat: np.ndarray
    var_ave: np.ndarray


def read_global(state: ConsensusState) -> GlobalPrediction:
    if np.any(state.xi <= 0):
        raise DegenerateStateError("consensus state degenerate: non-positive precision estimate")
    var_hat = 1.0 / state.xi
    return GlobalPrediction(mu_hat=var_hat * state.theta, var_hat=var_hat, var_ave=state.lam.copy())


def poe_aggregate(means, variances) -> tuple[np.ndarray, np.ndarray]:
    """Product-of-experts fusion over the leading (agent) axis.

    Precision is the average of the agents' precisions; the mean is the
    precision-weighted average of their means.
    """
    means = np.asarray(means, dtype=float)
    variances = np.asarray(variances, dtype=float)
    if means.shape != variances.shape:
        raise ValueError(f"shape mismatch: {means.shape} vs {variances.shape}")
    if np.any(~(variances > 0)):
        raise ValueError("expert variances must be strictly positive")
    n = means.shape[0]
    prec = 1.0 / variances
    var_agg = 1.0 / (prec.sum(axis=0) / n)
    mu_agg = var_agg / n * (prec * means).sum(axis=0)
    if mu_agg.ndim == 0:
        return float(mu_agg), float(var_agg)
    return mu_agg, var_agg
