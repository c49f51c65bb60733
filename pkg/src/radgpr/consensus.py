"""First-order dynamic average consensus over the common test points.

Each agent carries three vectors indexed by the common points:

* ``theta`` tracks the network average of ``mean / var``,
* ``xi`` tracks the network average of ``1 / var``,
* ``lam`` tracks the network average of ``var``,

where ``(mean, var)`` is the agent's current local prediction. One round
mixes the neighbours' previous vectors with the agent's row of ``A(t-1)``
and adds the change in the agent's own reference signal.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


class ConsensusError(ValueError):
    pass


@dataclass(frozen=True)
class Signals:
    theta: np.ndarray
    xi: np.ndarray
    lam: np.ndarray


def reference_signals(mean, var) -> Signals:
    mean = np.asarray(mean, dtype=float)
    var = np.asarray(var, dtype=float)
    prec = 1.0 / var
    return Signals(theta=prec * mean, xi=prec, lam=var.copy())


@dataclass(frozen=True)
class ConsensusState:
    theta: np.ndarray
    xi: np.ndarray
    lam: np.ndarray
    prev_r: Signals

    def __len__(self) -> int:
        return len(self.xi)


@dataclass(frozen=True)
class RoundInput:
    """What one agent sees in a round: weighted neighbour states and its new signals."""

    neighbors: Sequence[tuple[float, ConsensusState]]
    new_r: Signals


def init_state(z_agg_size: int, sigma_f_sq: float, first_local_predictions=None) -> ConsensusState:
    """State before any data: every vector equals its time-zero reference signal.

    Without ``first_local_predictions`` the agent predicts from the zero-mean
    prior, so ``r_xi = 1 / sigma_f_sq``, ``r_theta = 0`` and ``r_lam = sigma_f_sq``.
    Starting ``xi`` at ``r_xi(0)`` and starting from zero with ``r_xi(-1) = 0`` give
    the same state after the first round, because mixing a constant vector with a
    row-stochastic matrix leaves it unchanged.
    """
    if not sigma_f_sq > 0:
        raise ConsensusError(f"sigma_f_sq must be positive, got {sigma_f_sq}")
    if first_local_predictions is None:
        mean = np.zeros(z_agg_size)
        var = np.full(z_agg_size, float(sigma_f_sq))
    else:
        mean, var = (np.asarray(a, dtype=float) for a in first_local_predictions)
        if mean.shape != (z_agg_size,) or var.shape != (z_agg_size,):
            raise ConsensusError("initial predictions do not match z_agg_size")
    r = reference_signals(mean, var)
    return ConsensusState(theta=r.theta.copy(), xi=r.xi.copy(), lam=r.lam.copy(), prev_r=r)


def fodac_step(state: ConsensusState, inp: RoundInput, self_weight: float) -> ConsensusState:
    """``x_i <- a_ii x_i + sum_j a_ij x_j + (r_i(t) - r_i(t-1))`` for each tracked vector.

    Neighbours are mixed in the order given, after the self term, so a fixed
    neighbour order gives bitwise-reproducible results.
    """
    m = len(state)
    weight_sum = self_weight + sum(w for w, _ in inp.neighbors)
    if abs(weight_sum - 1.0) > 1e-9:
        raise ConsensusError(f"weight row sums to {weight_sum!r}, expected 1")
    for _, s in inp.neighbors:
        if len(s) != m:
            raise ConsensusError(f"neighbour state has length {len(s)}, expected {m}")
    r = inp.new_r
    if not (len(r.theta) == len(r.xi) == len(r.lam) == m):
        raise ConsensusError("reference signals do not match state length")

    def mix(attr: str) -> np.ndarray:
        acc = self_weight * getattr(state, attr)
        for w, s in inp.neighbors:
            acc = acc + w * getattr(s, attr)
        return acc

    return ConsensusState(
        theta=mix("theta") + (r.theta - state.prev_r.theta),
        xi=mix("xi") + (r.xi - state.prev_r.xi),
        lam=mix("lam") + (r.lam - state.prev_r.lam),
        prev_r=r,
    )


def network_round(states: Sequence[ConsensusState], a_prev: np.ndarray, signals: Sequence[Signals]) -> list[ConsensusState]:
    """One synchronous round for every agent against a snapshot of ``states``."""
    out = []
    for i, (state, r) in enumerate(zip(states, signals)):
        row = a_prev[i]
        neigh = [(float(row[j]), states[j]) for j in range(len(states)) if j != i and row[j] != 0]
        out.append(fodac_step(state, RoundInput(neighbors=neigh, new_r=r), float(row[i])))
    return out


def sum_preservation_error(states: Sequence[ConsensusState]) -> dict[str, float]:
    """Relative gap between the summed states and the summed current signals.

    Reported as the max over common points of ``|sum_i x_i - sum_i r_i| / |sum_i r_i|``.
    """
    out = {}
    for attr in ("theta", "xi", "lam"):
        x = np.sum([getattr(s, attr) for s in states], axis=0)
        r = np.sum([getattr(s.prev_r, attr) for s in states], axis=0)
        scale = np.maximum(np.abs(r), np.finfo(float).tiny)
        out[attr] = float(np.max(np.abs(x - r) / scale)) if len(x) else 0.0
    return out


def spread(states: Sequence[ConsensusState], attr: str = "xi") -> np.ndarray:
    """Per-point ``max_i x_i - min_i x_i`` across agents."""
    x = np.array([getattr(s, attr) for s in states])
    return x.max(axis=0) - x.min(axis=0)


def tracking_residual(states: Sequence[ConsensusState], attr: str = "xi") -> np.ndarray:
    """Per agent, ``max_z |x_i(z) - mean_j r_j(z)|``."""
    x = np.array([getattr(s, attr) for s in states])
    avg = np.mean([getattr(s.prev_r, attr) for s in states], axis=0)
    if x.shape[1] == 0:
        return np.zeros(len(states))
    return np.abs(x - avg).max(axis=1)


def envelope(t, sigma_f_sq: float, zeta: float, n: int, b: int, delta_m0: float):
    """Upper envelope ``2 sigma_f^4 (1 - zeta)^(t / (n b - 1) - 1) delta_m0`` on the variance gap.

    ``t`` counts rounds since ``delta_m0`` was measured.
    """
    denom = max(n * b - 1, 1)
    t = np.asarray(t, dtype=float)
    return 2.0 * sigma_f_sq**2 * (1.0 - zeta) ** (t / denom - 1.0) * delta_m0
