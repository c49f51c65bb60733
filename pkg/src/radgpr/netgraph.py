"""Periodic communication-graph schedules and their assumption checks."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy.sparse.csgraph import connected_components


class GraphError(ValueError):
    pass


class ConnectivityError(GraphError):
    """Information could not reach every agent.

    ``missing`` maps each agent to the set of agents whose values it never received.
    """

    def __init__(self, message: str, missing: dict[int, set[int]]):
        super().__init__(message)
        self.missing = missing


PAIRS_4 = np.array(
    [
        [0.5, 0.0, 0.5, 0.0],
        [0.0, 0.5, 0.0, 0.5],
        [0.5, 0.0, 0.5, 0.0],
        [0.0, 0.5, 0.0, 0.5],
    ]
)
RING_4 = np.array(
    [
        [0.5, 0.25, 0.0, 0.25],
        [0.25, 0.5, 0.25, 0.0],
        [0.0, 0.25, 0.5, 0.25],
        [0.25, 0.0, 0.25, 0.5],
    ]
)


@dataclass(frozen=True)
class GraphSchedule:
    """One period of adjacency matrices; ``A(t) = matrices[t % period]``.

    Row index is the receiver: ``a_ij != 0`` means agent ``i`` hears agent ``j``.
    """

    matrices: tuple[np.ndarray, ...]

    def __post_init__(self):
        mats = tuple(np.array(m, dtype=float) for m in self.matrices)
        if not mats:
            raise GraphError("schedule needs at least one matrix")
        n = mats[0].shape[0] if mats[0].ndim == 2 else -1
        for k, m in enumerate(mats):
            if m.ndim != 2 or m.shape[0] != m.shape[1]:
                raise GraphError(f"matrix {k} is not square: shape {m.shape}")
            if m.shape[0] != n:
                raise GraphError(f"matrix {k} has size {m.shape[0]}, expected {n}")
            if not np.all(np.isfinite(m)):
                raise GraphError(f"matrix {k} has non-finite entries")
            m.setflags(write=False)
        object.__setattr__(self, "matrices", mats)

    @property
    def n(self) -> int:
        return self.matrices[0].shape[0]

    @property
    def period(self) -> int:
        return len(self.matrices)

    def at(self, t: int) -> np.ndarray:
        return self.matrices[t % self.period]

    @classmethod
    def static(cls, a) -> "GraphSchedule":
        return cls((np.asarray(a, dtype=float),))

    @classmethod
    def complete(cls, n: int) -> "GraphSchedule":
        return cls.static(np.full((n, n), 1.0 / n))

    @classmethod
    def ring_pairs(cls) -> "GraphSchedule":
        """Four-agent schedule alternating a ring (even t) and two pairs (odd t)."""
        return cls((RING_4, PAIRS_4))

    @cached_property
    def report(self) -> "ValidationReport":
        return validate(self)

    @property
    def alpha(self) -> float:
        return self.report.alpha

    @property
    def b(self) -> int | None:
        return self.report.b

    @property
    def zeta(self) -> float | None:
        return self.report.zeta


@dataclass(frozen=True)
class ValidationReport:
    ok: bool
    alpha: float
    b: int | None
    zeta: float | None
    violations: list[str] = field(default_factory=list)
    constant_product: bool = False

    def lines(self) -> list[str]:
        out = [
            f"ok: {self.ok}",
            f"alpha: {self.alpha!r}",
            f"b: {self.b}",
            f"zeta: {self.zeta!r}",
            f"constant transition product: {self.constant_product}",
        ]
        out += [f"violation: {v}" for v in self.violations]
        return out


def zeta(alpha: float, n: int, b: int) -> float:
    """Consensus contraction factor ``alpha ** (n (n + 1) b / 2 - 1)``."""
    return alpha ** (n * (n + 1) * b / 2 - 1)


def is_strongly_connected(support: np.ndarray) -> bool:
    ncomp, _ = connected_components(support != 0, directed=True, connection="strong")
    return ncomp == 1


def _smallest_window(schedule: GraphSchedule) -> int | None:
    supports = [m != 0 for m in schedule.matrices]
    p = schedule.period
    # a window of length p already contains every matrix, so longer ones add nothing
    for b in range(1, p + 1):
        if all(
            is_strongly_connected(np.logical_or.reduce([supports[(t + s) % p] for s in range(b)]))
            for t in range(p)
        ):
            return b
    return None


def _constant_product(schedule: GraphSchedule, tol: float) -> bool:
    prod = schedule.at(1).copy()
    ref = None
    for t in range(2, 2 * schedule.period + 2):
        prod = schedule.at(t) @ prod
        if ref is None:
            ref = prod.copy()
        elif not np.allclose(prod, ref, atol=tol, rtol=0):
            return False
    return True


def validate(schedule: GraphSchedule, tol: float = 1e-12) -> ValidationReport:
    """Check balanced communication, non-degeneracy and periodic strong connectivity.

    ``alpha`` is the smallest positive entry over the period; ``b`` the smallest
    window for which every windowed union graph is strongly connected.
    """
    violations = []
    n = schedule.n
    ones = np.ones(n)
    alpha = np.inf
    for k, a in enumerate(schedule.matrices):
        if np.any(a < 0):
            violations.append(f"A({k}) has negative entries")
        if np.any(a > 1 + tol):
            violations.append(f"A({k}) has entries above 1")
        if not np.allclose(a @ ones, ones, atol=tol, rtol=0):
            violations.append(f"A({k}) is not row stochastic")
        if not np.allclose(ones @ a, ones, atol=tol, rtol=0):
            violations.append(f"A({k}) is not column stochastic")
        diag = np.diag(a)
        if np.any(diag <= 0):
            bad = [int(i) for i in np.flatnonzero(diag <= 0)]
            violations.append(f"A({k}) has non-positive self weights for agents {bad}")
        pos = a[a > 0]
        if pos.size:
            alpha = min(alpha, float(pos.min()))
    b = _smallest_window(schedule)
    if b is None:
        violations.append("union graph over a full period is not strongly connected")
    alpha = float(alpha) if np.isfinite(alpha) else 0.0
    z = zeta(alpha, n, b) if (b is not None and alpha > 0) else None
    return ValidationReport(
        ok=not violations,
        alpha=alpha,
        b=b,
        zeta=z,
        violations=violations,
        constant_product=_constant_product(schedule, 1e-12),
    )


def neighbors_in(schedule: GraphSchedule, i: int, t: int) -> set[int]:
    if not 0 <= i < schedule.n:
        raise IndexError(f"agent {i} out of range for n={schedule.n}")
    if t < 0:
        raise IndexError(f"time {t} must be non-negative")
    row = schedule.at(t)[i]
    return {int(j) for j in np.flatnonzero(row) if j != i}


def _round_budget(schedule: GraphSchedule) -> int | None:
    b = schedule.b
    return None if b is None else max(1, (schedule.n - 1) * b)


def distributed_exchange_noise(
    schedule: GraphSchedule, local_values: Sequence[float], start: int = 0
) -> list[dict[int, float]]:
    """Flood ``(agent, value)`` pairs along edges in synchronous rounds.

    Each round, every agent merges what its in-neighbours knew at the end of
    the previous round. Stops once every agent knows all ``n`` values, or
    raises :class:`ConnectivityError` once no further progress is possible.
    """
    n = schedule.n
    if len(local_values) != n:
        raise GraphError(f"expected {n} values, got {len(local_values)}")
    known = [{i: float(local_values[i])} for i in range(n)]
    budget = _round_budget(schedule)
    idle = 0
    t = start
    rounds = 0
    while any(len(k) < n for k in known):
        if budget is not None and rounds >= budget:
            break
        if budget is None and idle >= schedule.period:
            break
        snapshot = [dict(k) for k in known]
        changed = False
        for i in range(n):
            for j in neighbors_in(schedule, i, t):
                for key, val in snapshot[j].items():
                    if key not in known[i]:
                        known[i][key] = val
                        changed = True
        idle = 0 if changed else idle + 1
        t += 1
        rounds += 1
    missing = {i: set(range(n)) - set(k) for i, k in enumerate(known) if len(k) < n}
    if missing:
        raise ConnectivityError(f"flooding incomplete after {rounds} rounds: {missing}", missing)
    return known


def max_consensus(schedule: GraphSchedule, local_values: Sequence[float], start: int = 0) -> list[float]:
    """Each round every agent keeps the max over itself and its in-neighbours.

    Runs ``n * b`` rounds; a schedule without a valid ``b`` is rejected.
    """
    n = schedule.n
    if len(local_values) != n:
        raise GraphError(f"expected {n} values, got {len(local_values)}")
    b = schedule.b
    if b is None:
        # reuse flooding to name who cannot hear whom
        distributed_exchange_noise(schedule, local_values, start)
        raise ConnectivityError("schedule is not periodically strongly connected", {})
    x = [float(v) for v in local_values]
    for r in range(n * b):
        prev = list(x)
        t = start + r
        for i in range(n):
            x[i] = max([prev[i]] + [prev[j] for j in neighbors_in(schedule, i, t)])
    return x
