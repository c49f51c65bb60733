"""Streaming per-agent datasets and nearest-neighbour GP prediction."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .kernel import Kernel

PriorMean = Callable[[np.ndarray], np.ndarray]


class DatasetError(ValueError):
    pass


class RepetitiveSampleError(DatasetError):
    pass


def zero_mean(z: np.ndarray) -> np.ndarray:
    z = np.atleast_2d(z)
    return np.zeros(z.shape[0])


def sq_dists(points: np.ndarray, ref: np.ndarray) -> np.ndarray:
    """Squared distances from every row of ``points`` to every row of ``ref``."""
    diff = points[:, None, :] - ref[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


class AgentDataset:
    """Append-only ``(inputs, outputs)`` store for one agent.

    Inputs must be unique; equality is exact coordinate equality.
    """

    def __init__(self, agent_id: int = 0, noise_var: float = 1.0, dim: int = 2):
        if not noise_var >= 0:
            raise DatasetError(f"noise variance must be non-negative, got {noise_var}")
        self.agent_id = agent_id
        self.noise_var = float(noise_var)
        self.dim = dim
        self._z = np.empty((16, dim))
        self._y = np.empty(16)
        self._size = 0
        self._seen: set[tuple[float, ...]] = set()

    def __len__(self) -> int:
        return self._size

    @property
    def inputs(self) -> np.ndarray:
        return self._z[: self._size]

    @property
    def outputs(self) -> np.ndarray:
        return self._y[: self._size]

    def __contains__(self, z) -> bool:
        return tuple(np.asarray(z, dtype=float).ravel().tolist()) in self._seen

    def append(self, z, y: float) -> "AgentDataset":
        z = np.asarray(z, dtype=float).ravel()
        if z.shape != (self.dim,):
            raise DatasetError(f"expected a {self.dim}-d input, got shape {z.shape}")
        key = tuple(z.tolist())
        if key in self._seen:
            raise RepetitiveSampleError(f"repetitive sample at {key} for agent {self.agent_id}")
        if self._size == len(self._y):
            self._z = np.concatenate([self._z, np.empty_like(self._z)])
            self._y = np.concatenate([self._y, np.empty_like(self._y)])
        self._z[self._size] = z
        self._y[self._size] = float(y)
        self._size += 1
        self._seen.add(key)
        return self


@dataclass(frozen=True)
class LocalPrediction:
    mean: float
    variance: float
    nearest: np.ndarray
    rho_sq: float


def nearest_index(ds: AgentDataset, z_star) -> tuple[int, float]:
    """Index of the earliest-inserted minimum-distance input, and its squared distance."""
    if len(ds) == 0:
        raise DatasetError("nearest neighbour of an empty dataset")
    z_star = np.asarray(z_star, dtype=float).reshape(1, -1)
    d2 = sq_dists(z_star, ds.inputs)[0]
    idx = int(np.argmin(d2))
    return idx, float(d2[idx])


def nearest(ds: AgentDataset, z_star) -> tuple[np.ndarray, float]:
    idx, _ = nearest_index(ds, z_star)
    return ds.inputs[idx].copy(), float(ds.outputs[idx])


def _nn_gpr(kernel: Kernel, rho_sq, y_n, mu_star, mu_n, noise_var):
    k_sn = kernel.kappa_sq(rho_sq)
    k_ss = kernel.sigma_f_sq
    k_nn_noisy = kernel.sigma_f_sq + noise_var
    mean = mu_star + k_sn * (y_n - mu_n) / k_nn_noisy
    var = k_ss - k_sn * k_sn / k_nn_noisy
    return mean, var


def predict(ds: AgentDataset, kernel: Kernel, z_star, prior_mean: PriorMean = zero_mean) -> LocalPrediction:
    """Condition the prior on the single nearest sample to ``z_star``."""
    idx, rho_sq = nearest_index(ds, z_star)
    z_n = ds.inputs[idx]
    z_star = np.asarray(z_star, dtype=float).reshape(1, -1)
    mu_star = float(prior_mean(z_star)[0])
    mu_n = float(prior_mean(z_n.reshape(1, -1))[0])
    mean, var = _nn_gpr(kernel, rho_sq, float(ds.outputs[idx]), mu_star, mu_n, ds.noise_var)
    return LocalPrediction(mean=float(mean), variance=float(var), nearest=z_n.copy(), rho_sq=rho_sq)


class NearestTracker:
    """Incrementally maintained nearest neighbours of a fixed set of query points.

    Equivalent to a linear scan with earliest-index tie-breaking: a new sample
    only replaces the current neighbour when it is strictly closer.
    Samples may come with their own noise variance (pooled datasets).
    """

    def __init__(self, queries: np.ndarray):
        self.queries = np.asarray(queries, dtype=float)
        m = len(self.queries)
        self.rho_sq = np.full(m, np.inf)
        self.y = np.zeros(m)
        self.noise_var = np.zeros(m)
        self.z = np.full_like(self.queries, np.nan)
        self.count = 0

    def add(self, z, y: float, noise_var: float) -> None:
        z = np.asarray(z, dtype=float).ravel()
        diff = self.queries - z
        d2 = np.einsum("ij,ij->i", diff, diff)
        closer = d2 < self.rho_sq
        self.rho_sq[closer] = d2[closer]
        self.y[closer] = y
        self.noise_var[closer] = noise_var
        self.z[closer] = z
        self.count += 1

    def predict(self, kernel: Kernel, prior_mean: PriorMean = zero_mean) -> tuple[np.ndarray, np.ndarray]:
        if self.count == 0:
            raise DatasetError("nearest neighbour of an empty dataset")
        mu_star = prior_mean(self.queries)
        mu_n = prior_mean(self.z)
        return _nn_gpr(kernel, self.rho_sq, self.y, mu_star, mu_n, self.noise_var)

    @property
    def dispersion(self) -> float:
        return float(np.sqrt(self.rho_sq.max()))


def predict_many(ds: AgentDataset, kernel: Kernel, z_stars, prior_mean: PriorMean = zero_mean):
    """Vectorised :func:`predict` over rows of ``z_stars``; returns ``(mean, var)``."""
    if len(ds) == 0:
        raise DatasetError("nearest neighbour of an empty dataset")
    tracker = NearestTracker(z_stars)
    for z, y in zip(ds.inputs, ds.outputs):
        tracker.add(z, y, ds.noise_var)
    return tracker.predict(kernel, prior_mean)


def dispersion_sq(ds: AgentDataset, probe_grid) -> float:
    probe_grid = np.atleast_2d(np.asarray(probe_grid, dtype=float))
    if len(ds) == 0 or probe_grid.size == 0:
        raise DatasetError("dispersion needs a non-empty dataset and probe grid")
    return float(sq_dists(probe_grid, ds.inputs).min(axis=1).max())


def dispersion(ds: AgentDataset, probe_grid) -> float:
    """Largest distance from a probe point to its nearest dataset input.

    A finite-grid stand-in for the supremum over the whole domain.
    """
    return float(np.sqrt(dispersion_sq(ds, probe_grid)))


def variance_bounds(kernel: Kernel, noise_var: float, disp_sq: float) -> tuple[float, float]:
    """Lower and upper bounds on the nearest-neighbour predictive variance.

    The upper bound holds for query points inside the set the dispersion was
    measured on.
    """
    s = kernel.sigma_f_sq
    k_d = kernel.kappa_sq(disp_sq)
    lower = s * noise_var / (s + noise_var)
    upper = s - k_d * k_d / (s + noise_var)
    return lower, upper
