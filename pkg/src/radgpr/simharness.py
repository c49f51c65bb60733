"""Synchronous multi-agent simulation of the full local / distributed / fused pipeline.

Agents wander a box, observe a latent function with Gaussian noise, and at
every round run local nearest-neighbour GPR on the test grid, one consensus
round on the common sub-grid, and the fusion step. A centralized
nearest-neighbour GPR over the pooled data runs alongside as the baseline.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import consensus as cons
from .distributed_gpr import GlobalPrediction, poe_aggregate, read_global
from .fused_gpr import FusedPrediction, fuse
from .kernel import FusionConstants, Kernel, NoiseProfile, compute_fusion_constants, exchange_and_select
from .local_gpr import AgentDataset, NearestTracker, RepetitiveSampleError
from .netgraph import GraphSchedule

log = logging.getLogger(__name__)

Latent = Callable[[np.ndarray], np.ndarray]


class ConfigError(ValueError):
    pass


def _sin_cos(z: np.ndarray) -> np.ndarray:
    z = np.atleast_2d(z)
    return np.sin(z[:, 0]) + np.cos(z[:, 1])


def _linear(z: np.ndarray) -> np.ndarray:
    return np.atleast_2d(z)[:, 0].astype(float)


def _constant(z: np.ndarray) -> np.ndarray:
    return np.ones(np.atleast_2d(z).shape[0])


LATENTS: dict[str, Latent] = {
    "sin-cos": _sin_cos,
    "linear": _linear,
    "constant": _constant,
}


@dataclass(frozen=True)
class Box:
    low: tuple[float, ...]
    high: tuple[float, ...]

    def __post_init__(self):
        lo = tuple(float(x) for x in self.low)
        hi = tuple(float(x) for x in self.high)
        if len(lo) != len(hi) or not lo:
            raise ConfigError("domain bounds must have matching non-zero dimension")
        if any(not (a < b) for a, b in zip(lo, hi)) or not all(map(math.isfinite, lo + hi)):
            raise ConfigError(f"domain must be a finite non-empty box, got {lo}..{hi}")
        object.__setattr__(self, "low", lo)
        object.__setattr__(self, "high", hi)

    @property
    def dim(self) -> int:
        return len(self.low)

    def contains(self, z) -> bool:
        z = np.asarray(z, dtype=float)
        return bool(np.all(z >= self.low) and np.all(z <= self.high))

    def clamp(self, z) -> np.ndarray:
        return np.clip(z, self.low, self.high)

    def reflect(self, z) -> np.ndarray:
        lo = np.asarray(self.low)
        width = np.asarray(self.high) - lo
        u = np.mod(np.asarray(z, dtype=float) - lo, 2 * width)
        return lo + np.where(u > width, 2 * width - u, u)


@dataclass(frozen=True)
class Grid:
    """Tensor-product grid; ``points`` are in C order (last axis fastest)."""

    axes: tuple[np.ndarray, ...]

    @classmethod
    def uniform(cls, box: Box, per_axis: int) -> "Grid":
        if per_axis < 1:
            raise ConfigError("grid needs at least one point per axis")
        return cls(tuple(np.linspace(lo, hi, per_axis) for lo, hi in zip(box.low, box.high)))

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(len(a) for a in self.axes)

    @property
    def points(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def __len__(self) -> int:
        return int(np.prod(self.shape))

    def strided(self, stride: int) -> np.ndarray:
        """Flat indices of the sub-grid keeping every ``stride``-th point per axis."""
        idx = np.arange(len(self)).reshape(self.shape)
        return idx[tuple(slice(None, None, stride) for _ in self.shape)].ravel()


@dataclass(frozen=True)
class Motion:
    kind: str = "brownian"  # "brownian" or "uniform"
    step_cov: np.ndarray | float = 1.0
    boundary: str = "clamp"  # "clamp" or "reflect"

    def __post_init__(self):
        if self.kind not in ("brownian", "uniform"):
            raise ConfigError(f"unknown motion kind {self.kind!r}")
        if self.boundary not in ("clamp", "reflect"):
            raise ConfigError(f"unknown boundary rule {self.boundary!r}")

    def chol(self, dim: int) -> np.ndarray:
        cov = np.asarray(self.step_cov, dtype=float)
        if cov.ndim == 0:
            cov = float(cov) * np.eye(dim)
        if cov.shape != (dim, dim):
            raise ConfigError(f"step covariance has shape {cov.shape}, expected {(dim, dim)}")
        if not np.allclose(cov, cov.T) or np.any(np.linalg.eigvalsh(cov) < -1e-12):
            raise ConfigError("step covariance must be symmetric positive semi-definite")
        w, q = np.linalg.eigh(cov)
        return q * np.sqrt(np.clip(w, 0, None))


@dataclass(frozen=True)
class SimConfig:
    n_agents: int = 4
    rounds: int = 100
    domain: Box = field(default_factory=lambda: Box((0.0, 0.0), (10.0, 10.0)))
    latent: str = "sin-cos"
    noise: NoiseProfile = field(default_factory=lambda: NoiseProfile((0.01,) * 4))
    kernel: Kernel = field(default_factory=Kernel)
    grid_per_axis: int = 40
    agg_stride: int = 2
    schedule: GraphSchedule = field(default_factory=GraphSchedule.ring_pairs)
    motion: Motion = field(default_factory=Motion)
    seed: int = 0
    initial_positions: tuple[tuple[float, ...], ...] | None = None
    prior_mean: float = 0.0
    freeze_after: int | None = None
    sigma_f_mode: str = "fixed"  # "fixed" or "selected"
    sigma_f_start: float = 1.0

    @classmethod
    def four_robot(cls, **overrides) -> "SimConfig":
        """Four robots, T=100, 40x40 test grid on [0,10]^2, every other point per axis shared."""
        return cls(**overrides)

    def problems(self) -> list[str]:
        out = []
        if self.n_agents < 1:
            out.append("n_agents must be >= 1")
        if self.rounds < 1:
            out.append("rounds must be >= 1")
        if self.noise.n != self.n_agents:
            out.append(f"noise profile has {self.noise.n} entries for {self.n_agents} agents")
        if self.schedule.n != self.n_agents:
            out.append(f"schedule is {self.schedule.n}x{self.schedule.n} for {self.n_agents} agents")
        if self.latent not in LATENTS:
            out.append(f"unknown latent {self.latent!r}; expected one of {sorted(LATENTS)}")
        if self.agg_stride < 1:
            out.append("agg_stride must be >= 1")
        if self.sigma_f_mode not in ("fixed", "selected"):
            out.append(f"unknown sigma_f mode {self.sigma_f_mode!r}")
        if self.freeze_after is not None and self.freeze_after < 1:
            out.append("freeze_after must be >= 1")
        if self.kernel.sigma_f_sq < 1:
            out.append("sigma_f_sq must be >= 1")
        if self.initial_positions is not None:
            if len(self.initial_positions) != self.n_agents:
                out.append("initial_positions must list one point per agent")
            elif not all(self.domain.contains(p) and len(p) == self.domain.dim for p in self.initial_positions):
                out.append("initial positions must lie in the domain")
        return out


@dataclass
class MetricsRow:
    t: int
    agent: int
    err_local: float
    err_fused: float
    err_central: float
    var_local_avg: float
    var_fused_avg: float
    dispersion: float
    consensus_residual: float

    FIELDS = (
        "t",
        "agent",
        "err_local",
        "err_fused",
        "err_central",
        "var_local_avg",
        "var_fused_avg",
        "dispersion",
        "consensus_residual",
    )


@dataclass
class PredictionBundle:
    agent: int
    local_mean: np.ndarray
    local_var: np.ndarray
    glob: GlobalPrediction
    fused: FusedPrediction


@dataclass
class Diagnostics:
    sum_preservation: list[dict[str, float]] = field(default_factory=list)
    poe_gap: list[float] = field(default_factory=list)
    xi_spread: list[float] = field(default_factory=list)
    active_sizes: list[list[int]] = field(default_factory=list)
    strict_improvements: int = 0
    nonpositive_fused: int = 0
    fused_above_local: int = 0
    skipped_samples: int = 0
    checked_points: int = 0


@dataclass
class SimResult:
    rows: list[MetricsRow]
    bundles: list[PredictionBundle]
    z_star: np.ndarray
    agg_index: np.ndarray
    eta: np.ndarray
    central_mean: np.ndarray
    central_var: np.ndarray
    datasets: list[AgentDataset]
    kernel: Kernel
    constants: FusionConstants
    diagnostics: Diagnostics
    states: list[cons.ConsensusState] = field(default_factory=list)

    def agent_curve(self, agent: int, column: str) -> np.ndarray:
        return np.array([getattr(r, column) for r in self.rows if r.agent == agent])


def step_trajectory(pos, rng: np.random.Generator, motion: Motion, domain: Box) -> np.ndarray:
    """Next position; one draw per call regardless of the motion parameters."""
    pos = np.asarray(pos, dtype=float)
    if motion.kind == "uniform":
        return rng.uniform(domain.low, domain.high)
    step = motion.chol(domain.dim) @ rng.standard_normal(domain.dim)
    nxt = pos + step
    return domain.clamp(nxt) if motion.boundary == "clamp" else domain.reflect(nxt)


def observe(eta: Latent, pos, noise_var: float, rng: np.random.Generator) -> float:
    pos = np.asarray(pos, dtype=float).reshape(1, -1)
    return float(eta(pos)[0] + math.sqrt(noise_var) * rng.standard_normal())


def agent_rngs(seed: int, agent: int) -> tuple[np.random.Generator, np.random.Generator]:
    """Independent (motion, noise) generators for one agent, independent of agent count."""
    motion = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(agent, 0)))
    noise = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(agent, 1)))
    return motion, noise


def resolve_kernel(cfg: SimConfig) -> Kernel:
    if cfg.sigma_f_mode == "fixed":
        return cfg.kernel
    sigma_f_sq, _ = exchange_and_select(cfg.schedule, cfg.noise, cfg.sigma_f_start)
    return cfg.kernel.with_sigma_f_sq(sigma_f_sq)


def run(cfg: SimConfig, threads: int = 1) -> SimResult:
    """Execute ``cfg.rounds`` synchronous rounds; one :class:`MetricsRow` per (round, agent)."""
    problems = cfg.problems()
    if problems:
        raise ConfigError("; ".join(problems))
    report = cfg.schedule.report
    if not report.ok:
        raise ConfigError("schedule invalid: " + "; ".join(report.violations))

    n = cfg.n_agents
    kernel = resolve_kernel(cfg)
    consts = compute_fusion_constants(kernel.sigma_f_sq, cfg.noise, strict=False)
    eta_fn = LATENTS[cfg.latent]
    prior_value = float(cfg.prior_mean)

    def prior_mean(z):
        return np.full(np.atleast_2d(z).shape[0], prior_value)

    grid = Grid.uniform(cfg.domain, cfg.grid_per_axis)
    z_star = grid.points
    agg_index = grid.strided(cfg.agg_stride)
    z_agg = z_star[agg_index]
    eta = eta_fn(z_star)
    m = len(agg_index)

    rngs = [agent_rngs(cfg.seed, i) for i in range(n)]
    if cfg.initial_positions is not None:
        pos = [np.asarray(p, dtype=float) for p in cfg.initial_positions]
    else:
        pos = [rngs[i][0].uniform(cfg.domain.low, cfg.domain.high) for i in range(n)]

    datasets = [AgentDataset(i, cfg.noise.variances[i], cfg.domain.dim) for i in range(n)]
    trackers = [NearestTracker(z_star) for _ in range(n)]
    central = NearestTracker(z_star)
    prior_agg = (prior_mean(z_agg), np.full(m, kernel.sigma_f_sq))
    states = [cons.init_state(m, kernel.sigma_f_sq, prior_agg) for _ in range(n)]

    diag = Diagnostics()
    rows: list[MetricsRow] = []
    local: list[tuple[np.ndarray, np.ndarray]] = []
    bundles: list[PredictionBundle] = []
    pool = ThreadPoolExecutor(threads) if threads > 1 else None
    pmap = pool.map if pool else map

    try:
        for t in range(1, cfg.rounds + 1):
            sampling = cfg.freeze_after is None or t <= cfg.freeze_after
            if sampling:
                for i in range(n):
                    if t > 1:
                        pos[i] = step_trajectory(pos[i], rngs[i][0], cfg.motion, cfg.domain)
                    y = observe(eta_fn, pos[i], cfg.noise.variances[i], rngs[i][1])
                    try:
                        datasets[i].append(pos[i], y)
                    except RepetitiveSampleError:
                        diag.skipped_samples += 1
                        continue
                    trackers[i].add(pos[i], y, cfg.noise.variances[i])
                    central.add(pos[i], y, cfg.noise.variances[i])
                local = list(pmap(lambda tr: tr.predict(kernel, prior_mean), trackers))

            signals = [cons.reference_signals(mu[agg_index], var[agg_index]) for mu, var in local]
            states = cons.network_round(states, cfg.schedule.at(t - 1), signals)
            globs = [read_global(s) for s in states]

            def fuse_agent(i):
                mu, var = local[i]
                return fuse(z_star, z_agg, agg_index, mu, var, globs[i], kernel, consts, i)

            fused = list(pmap(fuse_agent, range(n)))
            c_mean, c_var = central.predict(kernel, prior_mean)
            err_central = float(np.mean(np.abs(c_mean - eta)))

            diag.sum_preservation.append(cons.sum_preservation_error(states))
            _, var_agg = poe_aggregate([mu[agg_index] for mu, _ in local], [v[agg_index] for _, v in local])
            diag.poe_gap.append(float(max(np.max(np.abs(g.var_hat - var_agg)) for g in globs)) if m else 0.0)
            diag.xi_spread.append(float(cons.spread(states).max()) if m else 0.0)
            diag.active_sizes.append([len(f.active_set) for f in fused])
            residual = cons.tracking_residual(states)

            for i in range(n):
                mu, var = local[i]
                f = fused[i]
                diag.strict_improvements += int(np.count_nonzero(f.gamma > 0))
                diag.nonpositive_fused += int(np.count_nonzero(~(f.var_tilde > 0)))
                diag.fused_above_local += int(np.count_nonzero(f.var_tilde > var))
                diag.checked_points += len(var)
                rows.append(
                    MetricsRow(
                        t=t,
                        agent=i,
                        err_local=float(np.mean(np.abs(mu - eta))),
                        err_fused=float(np.mean(np.abs(f.mu_tilde - eta))),
                        err_central=err_central,
                        var_local_avg=float(np.mean(var)),
                        var_fused_avg=float(np.mean(f.var_tilde)),
                        dispersion=trackers[i].dispersion,
                        consensus_residual=float(residual[i]),
                    )
                )
            bundles = [PredictionBundle(i, local[i][0], local[i][1], globs[i], fused[i]) for i in range(n)]
    finally:
        if pool:
            pool.shutdown()

    if diag.skipped_samples:
        log.info("dropped %d repetitive samples", diag.skipped_samples)
    return SimResult(
        rows=rows,
        bundles=bundles,
        z_star=z_star,
        agg_index=agg_index,
        eta=eta,
        central_mean=c_mean,
        central_var=c_var,
        datasets=datasets,
        kernel=kernel,
        constants=consts,
        diagnostics=diag,
        states=states,
    )


@dataclass(frozen=True)
class LipschitzEstimate:
    ell_eta: float


def _neighbour_offsets(dim: int) -> list[tuple[int, ...]]:
    offs = []
    for off in np.ndindex(*(3,) * dim):
        o = tuple(x - 1 for x in off)
        nz = [x for x in o if x != 0]
        if nz and nz[0] > 0:
            offs.append(o)
    return offs


def estimate_lipschitz(eta: Latent, grid: Grid) -> LipschitzEstimate:
    """Largest finite-difference slope between grid neighbours (axis and diagonal)."""
    if len(grid) < 2:
        raise ConfigError("Lipschitz estimate needs at least two grid points")
    pts = grid.points.reshape(grid.shape + (-1,))
    vals = eta(grid.points).reshape(grid.shape)
    best = 0.0
    for off in _neighbour_offsets(len(grid.shape)):
        src = tuple(slice(max(0, -o), s - max(0, o)) for o, s in zip(off, grid.shape))
        dst = tuple(slice(max(0, o), s - max(0, -o)) for o, s in zip(off, grid.shape))
        if any(sl.stop <= sl.start for sl in src):
            continue
        dv = np.abs(vals[dst] - vals[src])
        dz = np.linalg.norm(pts[dst] - pts[src], axis=-1)
        best = max(best, float(np.max(dv / dz)))
    return LipschitzEstimate(best)


@dataclass(frozen=True)
class MeanBoundReport:
    violation_rate: float
    bound: float
    margin: float
    n_draws: int
    samples: int

    @property
    def passed(self) -> bool:
        return self.violation_rate <= self.bound + self.margin


def check_mean_error_bound(
    inputs: Sequence[np.ndarray],
    noise: NoiseProfile,
    kernel: Kernel,
    eta: Latent,
    grid: Grid,
    epsilon: float,
    n_draws: int = 500,
    seed: int = 0,
) -> MeanBoundReport:
    """Monte Carlo check of the local-mean accuracy bound under a zero prior mean.

    The sampling geometry is fixed; only the observation noise is redrawn.
    For every agent and grid point the check is
    ``|mean - eta| <= (1 - kappa(d) / (sigma_f^2 + sigma_e^2)) * sup|eta| + ell * d + epsilon``
    with ``d`` the agent's grid dispersion. The reported margin is three
    binomial standard deviations at the Chebyshev rate over ``n_draws``.
    """
    sigma_e_max = math.sqrt(noise.sigma_e_max_sq)
    if not epsilon > sigma_e_max:
        raise ValueError(f"epsilon must exceed sigma_e_max={sigma_e_max}")
    pts = grid.points
    eta_grid = eta(pts)
    sup_eta = float(np.max(np.abs(eta_grid)))
    ell = estimate_lipschitz(eta, grid).ell_eta
    rng = np.random.default_rng(seed)
    s = kernel.sigma_f_sq
    geometry = []
    for i, z in enumerate(inputs):
        z = np.atleast_2d(np.asarray(z, dtype=float))
        tr = NearestTracker(pts)
        idx = np.empty(len(pts), dtype=int)
        for k, zk in enumerate(z):
            before = tr.rho_sq.copy()
            tr.add(zk, 0.0, 0.0)
            idx[tr.rho_sq < before] = k
        d = math.sqrt(float(tr.rho_sq.max()))
        denom = s + noise.variances[i]
        bound = (1.0 - float(kernel.kappa(d)) / denom) * sup_eta + ell * d + epsilon
        weight = kernel.kappa_sq(tr.rho_sq) / denom
        geometry.append((z, idx, weight, bound))
    violations = 0
    samples = 0
    for _ in range(n_draws):
        for i, (z, idx, weight, bound) in enumerate(geometry):
            y = eta(z) + math.sqrt(noise.variances[i]) * rng.standard_normal(len(z))
            mean = weight * y[idx]
            violations += int(np.count_nonzero(np.abs(mean - eta_grid) > bound))
            samples += len(pts)
    p = min(1.0, noise.sigma_e_max_sq / epsilon**2)
    margin = 3.0 * math.sqrt(p * (1.0 - p) / n_draws)
    return MeanBoundReport(
        violation_rate=violations / samples, bound=p, margin=margin, n_draws=n_draws, samples=samples
    )
