"""Fabrication simulator, Monte Carlo calibration and brute-force oracles.

Random streams: every public entry point takes an integer ``seed`` and builds a
``numpy.random.SeedSequence`` from it. Replicate ``r`` of a calibration run
draws from ``SeedSequence(seed).spawn(reps)[r]`` (PCG64), so results do not
depend on execution order or on how replicates are split across workers.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from . import kernels
from .errors import ConvergenceError, DomainError
from .evidence import evidence_pergroup, evidence_pooled, group_means
from .summary import Cell, CellTable, StudySummary

__all__ = [
    "RawDataset",
    "CopyingDraw",
    "LemmaSample",
    "CalibrationResult",
    "GENERATOR_ID",
    "rng_for",
    "fabricate",
    "mse_estimate",
    "error_correlation",
    "lemma_sample",
    "lemma_draws",
    "dependent_t",
    "sup_chi_oracle",
    "sup_oracle",
    "v_tilde_oracle",
    "null_calibration",
]

GENERATOR_ID = "numpy.PCG64/SeedSequence"
RHO_GRID_TOP = 1.0 - 1e-6


def rng_for(seed: int | np.random.SeedSequence) -> np.random.Generator:
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return np.random.Generator(np.random.PCG64(ss))


@dataclass(frozen=True)
class CopyingDraw:
    deltas: np.ndarray
    shared: np.ndarray
    idiosyncratic: np.ndarray

    @property
    def errors(self) -> np.ndarray:
        return np.where(self.deltas == 1, self.shared[None, :], self.idiosyncratic)


@dataclass(frozen=True)
class RawDataset:
    """Raw observations, one row per cell and one column per replicate index j."""

    values: np.ndarray
    mu: tuple[float, ...]
    sigma2: float
    rho: float
    seed: int | None
    generator: str = GENERATOR_ID
    draw: CopyingDraw | None = None

    @property
    def shape(self):
        return self.values.shape

    @property
    def cell_means(self) -> np.ndarray:
        return self.values.mean(axis=1)


def _check_rho(rho):
    if not (0.0 <= rho < 1.0):
        raise DomainError(f"rho must lie in [0, 1), got {rho}")


def fabricate(I: int, n: int, mu: Sequence[float], sigma: float, rho: float, seed) -> RawDataset:
    """Simulate data whose errors are partly copied across cells.

    Each error is, with probability sqrt(rho), the value ``U_j`` shared by all
    cells in column ``j``, and otherwise an independent ``V_ij``. Two cells then
    share an error with probability rho, which is their correlation.
    """
    _check_rho(rho)
    if I < 1 or n < 2 or int(n) != n:
        raise DomainError("need I >= 1 and an integer n >= 2")
    if not sigma > 0:
        raise DomainError("sigma must be positive")
    mu = np.broadcast_to(np.asarray(mu, dtype=float), (I,))
    rng = rng_for(seed)
    shared = rng.normal(0.0, sigma, size=n)
    idio = rng.normal(0.0, sigma, size=(I, n))
    deltas = (rng.random((I, n)) < math.sqrt(rho)).astype(np.int8)
    draw = CopyingDraw(deltas, shared, idio)
    values = mu[:, None] + draw.errors
    seed_echo = seed if isinstance(seed, (int, np.integer)) else None
    return RawDataset(values, tuple(mu), sigma * sigma, rho, seed_echo, GENERATOR_ID, draw)


def mse_estimate(data: RawDataset | np.ndarray) -> float:
    """Pooled within-cell variance, unbiased for sigma^2 whatever rho is."""
    x = data.values if isinstance(data, RawDataset) else np.asarray(data, dtype=float)
    I, n = x.shape
    if n < 2:
        raise DomainError("need at least 2 observations per cell")
    dev = x - x.mean(axis=1, keepdims=True)
    return float(np.sum(dev * dev) / (I * (n - 1)))


def error_correlation(data: RawDataset) -> float:
    """Average pairwise correlation across cells of the errors in the same column."""
    eps = data.values - np.asarray(data.mu)[:, None]
    c = np.corrcoef(eps)
    if c.ndim == 0:
        return float("nan")
    iu = np.triu_indices_from(c, k=1)
    return float(c[iu].mean())


@dataclass(frozen=True)
class LemmaSample:
    z: np.ndarray
    zbar: float
    s2: float


def _equicorr_normals(rng, d, rho, size):
    w = rng.standard_normal(size)
    e = rng.standard_normal((size, d))
    return math.sqrt(rho) * w[:, None] + math.sqrt(1.0 - rho) * e


def lemma_sample(d: int, rho: float, seed) -> LemmaSample:
    """One vector of d equicorrelated standard normals with its mean and variance."""
    if d < 2:
        raise DomainError("need d >= 2")
    _check_rho(rho)
    z = _equicorr_normals(rng_for(seed), d, rho, 1)[0]
    return LemmaSample(z, float(z.mean()), float(z.var(ddof=1)))


def lemma_draws(d: int, rho: float, size: int, seed):
    """Vectorized draws: returns ``(zbar, s2)`` arrays of length ``size``."""
    if d < 2:
        raise DomainError("need d >= 2")
    _check_rho(rho)
    z = _equicorr_normals(rng_for(seed), d, rho, size)
    return z.mean(axis=1), z.var(axis=1, ddof=1)


def dependent_t(z: LemmaSample | tuple, rho: float, d: int | None = None):
    """t statistic corrected for equicorrelation; t-distributed with d-1 df.

    Accepts a LemmaSample, or ``(zbar, s2)`` arrays together with ``d``.
    """
    _check_rho(rho)
    if isinstance(z, LemmaSample):
        zbar, s2, d = z.zbar, z.s2, z.z.size
    else:
        zbar, s2 = z
        if d is None:
            raise DomainError("d is required with raw arrays")
    s2 = np.asarray(s2, dtype=float)
    if np.any(s2 <= 0):
        raise DomainError("sample variance must be positive")
    return math.sqrt(d * (1.0 - rho) / (1.0 + (d - 1) * rho)) * np.asarray(zbar) / np.sqrt(s2)


def _rho_grid(resolution: int) -> np.ndarray:
    lin = np.linspace(0.0, RHO_GRID_TOP, resolution)
    # dense near 1, where maxima for tiny scatter live
    near_one = 1.0 - np.geomspace(1e-6, 1.0, resolution)[:-1]
    return np.unique(np.concatenate([lin, near_one]))


def sup_oracle(logf: Callable[[np.ndarray], np.ndarray], resolution: int = 10_000):
    """Grid scan of a log-objective over [0, 1 - 1e-6] followed by golden-section refinement.

    Returns ``(rho_star, log_max, diverged)``; ``diverged`` is set when the grid
    maximum sits on the upper edge.
    """
    if resolution < 1000:
        raise DomainError("grid resolution must be at least 1000")
    grid = _rho_grid(resolution)
    vals = np.asarray(logf(grid), dtype=float)
    k = int(np.argmax(vals))
    if k == grid.size - 1:
        return float(grid[k]), float(vals[k]), True
    if k == 0:
        lo, hi = grid[0], grid[1]
        res = minimize_scalar(lambda r: -float(logf(np.array([r]))[0]), bounds=(lo, hi),
                              method="bounded", options={"xatol": 1e-14})
        if -res.fun > vals[0]:
            return float(res.x), float(-res.fun), False
        return 0.0, float(vals[0]), False
    a, b, c = grid[k - 1], grid[k], grid[k + 1]
    res = minimize_scalar(lambda r: -float(logf(np.array([r]))[0]), bracket=(a, b, c),
                          method="golden", tol=1e-12)
    if not (a <= res.x <= c) or -res.fun < vals[k]:
        return float(b), float(vals[k]), False
    return float(res.x), float(-res.fun), False


def sup_chi_oracle(ss: float, dim: int, n: float, sigma2: float, resolution: int = 10_000):
    """Brute-force maximum of chi over rho, from the Gaussian log densities.

    The objective is built from the full log density of the group-centred cell
    means at rho versus at 0, not from the closed-form chi. Returns
    ``(rho_star, value, diverged)``.
    """
    # a deviation vector with the requested sum of squares and zero sum
    devs = np.zeros(dim)
    devs[0], devs[1] = math.sqrt(ss / 2.0), -math.sqrt(ss / 2.0)
    scale = sigma2 / n

    def logf(r):
        r = np.asarray(r, dtype=float)
        return (-0.5 * kernels.equicorr_logdet(dim, r)
                - 0.5 * (kernels.equicorr_quadform(devs, r) - float(devs @ devs)) / scale)

    rho_star, lmax, diverged = sup_oracle(logf, resolution)
    return rho_star, (math.inf if diverged else math.exp(lmax)), diverged


def _group_log_ratio(x: np.ndarray, nu: float, scale: float):
    d = x - nu
    base = float(d @ d)

    def logf(r):
        r = np.asarray(r, dtype=float)
        return -0.5 * kernels.equicorr_logdet(d.size, r) - 0.5 * (
            kernels.equicorr_quadform(d, r) - base) / scale

    return logf


def v_tilde_oracle(study: StudySummary, sigma2: float, tol: float = 1e-10,
                   resolution: int = 2000, max_sweeps: int = 20) -> float:
    """Evidential value with the group means held fixed, then minimized over them.

    Inner step: supremum over each group's correlation by grid + golden section.
    Outer step: coordinate descent over the group means starting at the sample
    group means. Groups are independent, so each sweep minimizes them one by one.
    """
    n = study.n
    scale = sigma2 / n
    table = study.table
    groups = [np.array([table[c].mean for c in g]) for g in study.grouping.groups]
    nus = list(group_means(table, study.grouping))

    def inner(k, nu):
        logf = _group_log_ratio(groups[k], nu, scale)
        _, lmax, diverged = sup_oracle(logf, resolution)
        if diverged:
            return math.inf
        return max(lmax, 0.0)

    values = [inner(k, nu) for k, nu in enumerate(nus)]
    for sweep in range(max_sweeps):
        moved = 0.0
        for k, x in enumerate(groups):
            if math.isinf(values[k]):
                continue
            width = max(float(np.ptp(x)), 1e-8)
            res = minimize_scalar(lambda v: inner(k, v), bounds=(nus[k] - width, nus[k] + width),
                                  method="bounded", options={"xatol": 1e-10 * max(1.0, abs(nus[k]))})
            if res.fun < values[k] - tol:
                moved = max(moved, abs(res.x - nus[k]))
                nus[k], values[k] = float(res.x), float(res.fun)
        if moved == 0.0:
            return math.exp(sum(values)) if all(map(math.isfinite, values)) else math.inf
    raise ConvergenceError(
        f"outer minimization did not settle after {max_sweeps} sweeps; last nu={nus}"
    )


@dataclass(frozen=True)
class CalibrationResult:
    v_pooled: np.ndarray
    v_pergroup: np.ndarray | None
    sigma2_hat: np.ndarray
    seed: int
    reps: int
    rho: float

    def quantiles(self, qs=(0.5, 0.9, 0.95, 0.99)) -> dict:
        out = {"pooled": {str(q): float(np.quantile(self.v_pooled, q)) for q in qs}}
        if self.v_pergroup is not None:
            out["per_group"] = {str(q): float(np.quantile(self.v_pergroup, q)) for q in qs}
        return out

    def exceedance(self, v0: float, model: str = "pooled"):
        """Monte Carlo estimate of P(V >= v0) and its binomial standard error."""
        v = self.v_pooled if model == "pooled" else self.v_pergroup
        p = float(np.mean(v >= v0))
        return p, math.sqrt(p * (1.0 - p) / v.size)


def _replicate(args):
    table, grouping_groups, mu, n_int, sigma, rho, child, per_group = args
    data = fabricate(len(mu), n_int, mu, sigma, rho, child)
    s2 = mse_estimate(data)
    sim_table = table.with_means(data.cell_means)
    study = StudySummary(sim_table, grouping_groups)
    vp = evidence_pooled(study, s2, n=n_int).v
    vg = evidence_pergroup(study, s2, n=n_int).v if per_group else math.nan
    return vp, vg, s2


def null_calibration(template: StudySummary, sigma2: float, reps: int, seed: int,
                     rho: float = 0.0, workers: int = 1) -> CalibrationResult:
    """Distribution of the evidential value for data simulated from the template.

    Cell means are set to the template's group means, raw data are simulated
    with the per-cell count rounded to an integer, sigma^2 is re-estimated by
    the within-cell mean square and both evidence models are evaluated.
    """
    if reps < 1:
        raise DomainError("reps must be at least 1")
    if reps < 1000:
        warnings.warn(f"only {reps} replicates; the calibration is coarse", stacklevel=2)
    if not sigma2 > 0:
        raise DomainError("sigma2 must be positive")
    _check_rho(rho)
    n_int = max(2, int(round(template.n)))
    table = template.table
    gm = dict(zip(range(template.grouping.K), group_means(table, template.grouping)))
    cell_mu = {c: gm[k] for k, g in enumerate(template.grouping.groups) for c in g}
    mu = [cell_mu[c] for c in table.ids]
    per_group = all(len(g) >= 2 for g in template.grouping.groups)
    exact = CellTable(table.design, tuple(Cell(c.id, c.coords, c.mean) for c in table.cells),
                      n_int * len(table.cells), None)
    children = np.random.SeedSequence(seed).spawn(reps)
    jobs = [(exact, template.grouping, mu, n_int, math.sqrt(sigma2), rho, ch, per_group)
            for ch in children]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            rows = list(pool.map(_replicate, jobs, chunksize=max(1, reps // (4 * workers))))
    else:
        rows = [_replicate(j) for j in jobs]
    arr = np.array(rows, dtype=float)
    return CalibrationResult(
        v_pooled=arr[:, 0],
        v_pergroup=arr[:, 1] if per_group else None,
        sigma2_hat=arr[:, 2],
        seed=seed,
        reps=reps,
        rho=rho,
    )
