"""Closed-form pieces of the equicorrelated normal model for cell means.

Cell means are modelled as ``N(mu, (sigma2 / n) * R)`` with ``R`` the
equicorrelation matrix (ones on the diagonal, ``rho`` elsewhere). Everything
here works in log space; ``rho`` close to 1 makes the determinant tiny.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DomainError

RHO_MAX = 1.0 - 1e-12


def clamp_rho(rho):
    """Validate ``rho`` and pull values within 1e-12 of 1 back to ``RHO_MAX``.

    Returns ``(rho, clamped)``. Negative values and values >= 1 raise DomainError.
    Accepts scalars or arrays.
    """
    r = np.asarray(rho, dtype=float)
    if np.any(~np.isfinite(r)) or np.any(r < 0.0) or np.any(r >= 1.0):
        raise DomainError(f"correlation must lie in [0, 1), got {rho}")
    clamped = bool(np.any(r > RHO_MAX))
    if clamped:
        r = np.minimum(r, RHO_MAX)
    return (float(r) if r.ndim == 0 else r), clamped


@dataclass(frozen=True)
class EquicorrSpec:
    dim: int
    rho: float
    sigma2: float
    n: float

    def __post_init__(self):
        if self.dim < 1:
            raise DomainError("dimension must be at least 1")
        clamp_rho(self.rho)
        if not self.sigma2 > 0:
            raise DomainError("sigma2 must be positive")
        if not self.n > 0:
            raise DomainError("per-cell count must be positive")


def equicorr_matrix(dim: int, rho: float) -> np.ndarray:
    return (1.0 - rho) * np.eye(dim) + rho * np.ones((dim, dim))


def equicorr_inverse(dim: int, rho: float) -> np.ndarray:
    """Closed-form inverse of the equicorrelation matrix."""
    c = 1.0 / ((1.0 - rho) * (1.0 + (dim - 1) * rho))
    m = np.full((dim, dim), -rho)
    np.fill_diagonal(m, 1.0 + (dim - 2) * rho)
    return c * m


def equicorr_logdet(dim: int, rho):
    """log det of the dim x dim equicorrelation matrix: (1+(d-1)rho)(1-rho)^(d-1)."""
    if dim < 1:
        raise DomainError("dimension must be at least 1")
    rho, _ = clamp_rho(rho)
    return np.log1p((dim - 1) * rho) + (dim - 1) * np.log1p(-rho)


def equicorr_quadform(devs: Sequence[float], rho):
    """d' R^{-1} d for the equicorrelation matrix R, without forming R."""
    d = np.asarray(devs, dtype=float)
    rho, _ = clamp_rho(rho)
    dim = d.size
    ssq = float(d @ d)
    tot = float(d.sum())
    return (ssq - rho / (1.0 + (dim - 1) * rho) * tot * tot) / (1.0 - rho)


def log_density_pooled(means: Sequence[float], nu: Sequence[float], spec: EquicorrSpec) -> float:
    """Log density of the cell means with one common correlation across all cells.

    ``nu`` is the mean vector expanded to one entry per cell.
    """
    x = np.asarray(means, dtype=float)
    mu = np.asarray(nu, dtype=float)
    if x.shape != mu.shape or x.size != spec.dim:
        raise DomainError(f"length mismatch: means {x.size}, nu {mu.size}, dim {spec.dim}")
    scale = spec.sigma2 / spec.n
    q = equicorr_quadform(x - mu, spec.rho)
    return (
        -0.5 * spec.dim * math.log(2.0 * math.pi * scale)
        - 0.5 * equicorr_logdet(spec.dim, spec.rho)
        - 0.5 * q / scale
    )


def log_density_pergroup(
    means: Sequence[float],
    nu: Sequence[float],
    group_specs: Sequence[EquicorrSpec],
    grouping: Sequence[Sequence[int]],
) -> float:
    """Log density when each group has its own correlation and groups are independent.

    ``grouping`` holds, per group, the positions of its cells in ``means``.
    """
    if len(group_specs) != len(grouping):
        raise DomainError("need exactly one spec per group")
    x = np.asarray(means, dtype=float)
    mu = np.asarray(nu, dtype=float)
    total = 0.0
    for spec, idx in zip(group_specs, grouping):
        if spec.dim != len(idx):
            raise DomainError(f"group of {len(idx)} cells paired with spec of dim {spec.dim}")
        total += log_density_pooled(x[list(idx)], mu[list(idx)], spec)
    return total
