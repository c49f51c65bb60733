"""YAML run configuration -> :class:`SimConfig`.

Schema (all keys optional unless noted; defaults reproduce the four-robot setup)::

    seed: 0
    rounds: 100
    agents:
      count: 4
      noise_variances: [0.01, 0.01, 0.01, 0.01]
      initial_positions: [[1, 1], ...]      # default: uniform draw per agent
    domain: {low: [0, 0], high: [10, 10]}
    latent: sin-cos                          # sin-cos | linear | constant
    prior_mean: 0.0
    kernel:
      form: squared_exponential              # or exponential
      sigma_f_sq: 1.0
      lengthscale_sq: 0.5                    # or lengthscale
      sigma_f_mode: fixed                    # fixed | selected
      sigma_f_start: 1.0
    test_grid: {per_axis: 40}
    z_agg: {fraction: 0.25}                  # or {stride: 2}
    schedule:
      preset: ring-pairs                      # or matrices: [A(0), A(1), ...]
    motion: {kind: brownian, step_cov: 1.0, boundary: clamp}
    freeze_after: null
"""
from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .kernel import Kernel, KernelError, NoiseProfile
from .netgraph import GraphError, GraphSchedule
from .simharness import Box, ConfigError, Motion, SimConfig

TOP_KEYS = {
    "seed", "rounds", "agents", "domain", "latent", "prior_mean", "kernel",
    "test_grid", "z_agg", "schedule", "motion", "freeze_after",
}


class ConfigParseError(ValueError):
    pass


def digest(raw: dict) -> str:
    """SHA-256 of the canonical JSON form; independent of key order."""
    canon = json.dumps(raw, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canon.encode()).hexdigest()


def _section(raw: dict, key: str) -> dict:
    val = raw.get(key) or {}
    if not isinstance(val, dict):
        raise ConfigParseError(f"'{key}' must be a mapping")
    return val


def _stride(spec: dict) -> int:
    if "stride" in spec:
        return int(spec["stride"])
    frac = float(spec.get("fraction", 0.25))
    if not 0 < frac <= 1:
        raise ConfigParseError(f"z_agg fraction must be in (0, 1], got {frac}")
    stride = round(1 / math.sqrt(frac))
    if not math.isclose(1 / stride**2, frac, rel_tol=1e-9):
        raise ConfigParseError(f"z_agg fraction {frac} is not 1/k^2 for an integer stride k")
    return stride


def _schedule(spec: dict, n: int) -> GraphSchedule:
    if spec.get("preset") == "ring-pairs":
        return GraphSchedule.ring_pairs()
    if spec.get("preset") == "complete":
        return GraphSchedule.complete(n)
    if "preset" in spec:
        raise ConfigParseError(f"unknown schedule preset {spec['preset']!r}")
    if "matrices" not in spec:
        raise ConfigParseError("schedule needs 'preset' or 'matrices'")
    return GraphSchedule(tuple(np.asarray(m, dtype=float) for m in spec["matrices"]))


def build_config(raw: dict[str, Any], seed: int | None = None) -> SimConfig:
    if not isinstance(raw, dict):
        raise ConfigParseError("config root must be a mapping")
    unknown = set(raw) - TOP_KEYS
    if unknown:
        raise ConfigParseError(f"unknown config keys: {sorted(unknown)}")
    try:
        agents = _section(raw, "agents")
        n = int(agents.get("count", 4))
        noise = NoiseProfile(tuple(agents.get("noise_variances", [0.01] * n)))
        init = agents.get("initial_positions")
        dom = _section(raw, "domain")
        k = _section(raw, "kernel")
        if "lengthscale" in k:
            kernel = Kernel.from_lengthscale(float(k.get("sigma_f_sq", 1.0)), float(k["lengthscale"]),
                                             k.get("form", "squared_exponential"))
        else:
            kernel = Kernel(float(k.get("sigma_f_sq", 1.0)), float(k.get("lengthscale_sq", 0.5)),
                            k.get("form", "squared_exponential"))
        mot = _section(raw, "motion")
        freeze = raw.get("freeze_after")
        return SimConfig(
            n_agents=n,
            rounds=int(raw.get("rounds", 100)),
            domain=Box(tuple(dom.get("low", (0.0, 0.0))), tuple(dom.get("high", (10.0, 10.0)))),
            latent=str(raw.get("latent", "sin-cos")),
            noise=noise,
            kernel=kernel,
            grid_per_axis=int(_section(raw, "test_grid").get("per_axis", 40)),
            agg_stride=_stride(_section(raw, "z_agg")),
            schedule=_schedule(_section(raw, "schedule") or {"preset": "ring-pairs"}, n),
            motion=Motion(
                kind=mot.get("kind", "brownian"),
                step_cov=np.asarray(mot.get("step_cov", 1.0), dtype=float),
                boundary=mot.get("boundary", "clamp"),
            ),
            seed=int(raw.get("seed", 0) if seed is None else seed),
            initial_positions=None if init is None else tuple(tuple(float(c) for c in p) for p in init),
            prior_mean=float(raw.get("prior_mean", 0.0)),
            freeze_after=None if freeze is None else int(freeze),
            sigma_f_mode=k.get("sigma_f_mode", "fixed"),
            sigma_f_start=float(k.get("sigma_f_start", 1.0)),
        )
    except (ConfigError, KernelError, GraphError, TypeError, ValueError) as exc:
        if isinstance(exc, ConfigParseError):
            raise
        raise ConfigParseError(str(exc)) from exc


def load_config(path: str | Path, seed: int | None = None) -> tuple[SimConfig, dict]:
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except OSError as exc:
        raise ConfigParseError(f"cannot read {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigParseError(f"malformed YAML in {path}: {exc}") from exc
    if raw is None:
        raw = {}
    return build_config(raw, seed), raw
