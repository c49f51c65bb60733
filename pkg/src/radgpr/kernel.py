"""Stationary kernels, fusion constants and the prior-variance selection protocol.

Every kernel here is a function of the distance between its two arguments
only, bounded above by its value at zero distance and non-increasing in
the distance. The prior variance ``sigma_f_sq`` therefore fully determines
``k(z, z)`` and, with the per-agent noise variances, the constants used by
the fusion step.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

KERNEL_FORMS = ("squared_exponential", "exponential")


class KernelError(ValueError):
    pass


class EmptyPositiveSetError(KernelError):
    """No agent satisfies ``c * sigma_f_sq - psi > 0``; raise ``sigma_f_sq``."""


class SigmaFSelectionError(RuntimeError):
    pass


@dataclass(frozen=True)
class Kernel:
    """Stationary covariance ``kappa(rho)`` with amplitude ``sigma_f_sq``.

    The squared-exponential form is ``sigma_f_sq * exp(-rho**2 / lengthscale_sq)``;
    the exponential form is ``sigma_f_sq * exp(-rho / lengthscale)``.
    Distances are handled squared wherever possible so that two code paths
    reaching the same squared distance produce bit-identical covariances.
    """

    sigma_f_sq: float = 1.0
    lengthscale_sq: float = 0.5
    form: str = "squared_exponential"

    def __post_init__(self):
        if not (self.sigma_f_sq > 0 and math.isfinite(self.sigma_f_sq)):
            raise KernelError(f"sigma_f_sq must be positive, got {self.sigma_f_sq}")
        if not (self.lengthscale_sq > 0 and math.isfinite(self.lengthscale_sq)):
            raise KernelError(f"lengthscale_sq must be positive, got {self.lengthscale_sq}")
        if self.form not in KERNEL_FORMS:
            raise KernelError(f"unknown kernel form {self.form!r}; expected one of {KERNEL_FORMS}")

    @classmethod
    def from_lengthscale(cls, sigma_f_sq: float, lengthscale: float, form: str = "squared_exponential") -> "Kernel":
        return cls(sigma_f_sq=sigma_f_sq, lengthscale_sq=lengthscale * lengthscale, form=form)

    @property
    def lengthscale(self) -> float:
        return math.sqrt(self.lengthscale_sq)

    def with_sigma_f_sq(self, sigma_f_sq: float) -> "Kernel":
        return Kernel(sigma_f_sq=sigma_f_sq, lengthscale_sq=self.lengthscale_sq, form=self.form)

    def kappa_sq(self, rho_sq):
        """Covariance as a function of the squared distance."""
        rho_sq = np.asarray(rho_sq, dtype=float)
        if self.form == "squared_exponential":
            out = self.sigma_f_sq * np.exp(-rho_sq / self.lengthscale_sq)
        else:
            out = self.sigma_f_sq * np.exp(-np.sqrt(rho_sq) / self.lengthscale)
        return out if out.ndim else float(out)

    def kappa(self, rho):
        rho = np.asarray(rho, dtype=float)
        return self.kappa_sq(rho * rho)

    def __call__(self, z, z2) -> float:
        return self.eval(z, z2)

    def eval(self, z, z2) -> float:
        z = np.atleast_1d(np.asarray(z, dtype=float))
        z2 = np.atleast_1d(np.asarray(z2, dtype=float))
        if z.shape != z2.shape:
            raise KernelError(f"dimension mismatch: {z.shape} vs {z2.shape}")
        diff = z - z2
        return float(self.kappa_sq(np.dot(diff, diff)))

    def cross(self, za, zb) -> np.ndarray:
        """Covariance matrix between two point sets (rows are points)."""
        za = np.atleast_2d(np.asarray(za, dtype=float))
        zb = np.atleast_2d(np.asarray(zb, dtype=float))
        if za.shape[1] != zb.shape[1]:
            raise KernelError(f"dimension mismatch: {za.shape[1]} vs {zb.shape[1]}")
        diff = za[:, None, :] - zb[None, :, :]
        return np.asarray(self.kappa_sq(np.einsum("ijk,ijk->ij", diff, diff)))


@dataclass(frozen=True)
class NoiseProfile:
    variances: tuple[float, ...]

    def __post_init__(self):
        v = tuple(float(x) for x in self.variances)
        if not v:
            raise KernelError("noise profile needs at least one agent")
        if any(not (x > 0 and math.isfinite(x)) for x in v):
            raise KernelError(f"noise variances must be strictly positive: {v}")
        object.__setattr__(self, "variances", v)

    @property
    def n(self) -> int:
        return len(self.variances)

    @property
    def sigma_e_min_sq(self) -> float:
        return min(self.variances)

    @property
    def sigma_e_max_sq(self) -> float:
        return max(self.variances)

    @property
    def homogeneous(self) -> bool:
        return len(set(self.variances)) == 1


@dataclass(frozen=True)
class FusionConstants:
    sigma_f_sq: float
    psi: np.ndarray
    chi: np.ndarray
    mu_chi: float
    sigma_chi_sq: float
    c: float
    v_plus: tuple[int, ...]
    eps_plus: float | None = field(default=None)

    def gate(self, i: int) -> float:
        """``max(0, c - psi_i)``: zero means agent ``i`` never fuses."""
        return max(0.0, self.c - float(self.psi[i]))


def compute_fusion_constants(sigma_f_sq: float, noise: NoiseProfile, *, strict: bool = True) -> FusionConstants:
    """Per-agent ``psi``, ``chi`` and the shared ``c``, ``eps_plus``.

    With ``strict`` an empty positive set raises :class:`EmptyPositiveSetError`;
    otherwise ``eps_plus`` is left as ``None``.
    """
    if not sigma_f_sq >= 1:
        raise KernelError(f"sigma_f_sq must be >= 1, got {sigma_f_sq}")
    var = np.asarray(noise.variances, dtype=float)
    psi = sigma_f_sq / (sigma_f_sq + var)
    chi = 1.0 / var + 1.0 / sigma_f_sq
    mu_chi = float(np.mean(chi))
    sigma_chi_sq = float(np.sum((chi + mu_chi) ** 2))
    if noise.homogeneous:
        # c reduces to psi algebraically; take it verbatim so c - psi is exactly 0.
        c = float(psi[0])
    else:
        c = float(np.mean(chi * psi)) / mu_chi
    margin = c * sigma_f_sq - psi
    v_plus = tuple(int(i) for i in np.flatnonzero(margin > 0))
    eps_plus = float(np.min(margin[list(v_plus)])) if v_plus else None
    if strict and eps_plus is None:
        raise EmptyPositiveSetError(
            f"no agent satisfies c*sigma_f^2 - psi > 0 at sigma_f_sq={sigma_f_sq}; raise sigma_f_sq"
        )
    return FusionConstants(
        sigma_f_sq=float(sigma_f_sq),
        psi=psi,
        chi=chi,
        mu_chi=mu_chi,
        sigma_chi_sq=sigma_chi_sq,
        c=c,
        v_plus=v_plus,
        eps_plus=eps_plus,
    )


@dataclass(frozen=True)
class SigmaCondition:
    sigma_f_sq: float
    lhs: float
    rhs: float
    constants: FusionConstants

    @property
    def holds(self) -> bool:
        return self.lhs <= self.rhs


def sigma_condition(sigma_f_sq: float, noise: NoiseProfile) -> SigmaCondition:
    """Evaluate ``sigma_chi^2 / (mu_chi^2 eps_plus) <= sigma_e_min^2 / sigma_e_max^2``.

    An empty positive set makes the left-hand side infinite.
    """
    consts = compute_fusion_constants(sigma_f_sq, noise, strict=False)
    rhs = noise.sigma_e_min_sq / noise.sigma_e_max_sq
    if consts.eps_plus is None:
        lhs = math.inf
    else:
        lhs = consts.sigma_chi_sq / (consts.mu_chi**2 * consts.eps_plus)
    return SigmaCondition(sigma_f_sq=float(sigma_f_sq), lhs=lhs, rhs=rhs, constants=consts)


def select_sigma_f(noise: NoiseProfile, start: float = 1.0, *, rtol: float = 1e-6, max_doublings: int = 64) -> float:
    """Smallest tested ``sigma_f_sq >= start`` for which :func:`sigma_condition` holds.

    Doubles from ``start`` until the condition holds, then bisects between the
    last failing and first passing candidates down to ``rtol``. The returned
    value is always a candidate at which the condition was evaluated and held.
    """
    if not start >= 1:
        raise KernelError(f"start must be >= 1, got {start}")
    hi = float(start)
    if sigma_condition(hi, noise).holds:
        return hi
    lo = hi
    for _ in range(max_doublings):
        hi = lo * 2.0
        if sigma_condition(hi, noise).holds:
            break
        lo = hi
    else:
        raise SigmaFSelectionError(f"condition not met after {max_doublings} doublings from {start}")
    while (hi - lo) > rtol * hi:
        mid = 0.5 * (lo + hi)
        if sigma_condition(mid, noise).holds:
            hi = mid
        else:
            lo = mid
    return hi


def exchange_and_select(schedule, noise: NoiseProfile, start: float = 1.0) -> tuple[float, list[float]]:
    """Run the full distributed protocol: flood noise variances, select locally, max-consensus.

    Returns the agreed ``sigma_f_sq`` and each agent's local choice.
    """
    from .netgraph import distributed_exchange_noise, max_consensus

    copies = distributed_exchange_noise(schedule, noise.variances)
    local = []
    for known in copies:
        profile = NoiseProfile(tuple(known[j] for j in range(noise.n)))
        local.append(select_sigma_f(profile, start))
    agreed = max_consensus(schedule, local)
    if len(set(agreed)) != 1:
        raise SigmaFSelectionError(f"max-consensus did not agree: {agreed}")
    return agreed[0], local


def as_noise_profile(values: Sequence[float] | NoiseProfile) -> NoiseProfile:
    return values if isinstance(values, NoiseProfile) else NoiseProfile(tuple(values))
