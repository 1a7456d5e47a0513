"""Evidential value for fabrication from within-group scatter of cell means.

Under the fabrication hypothesis the measurement errors of different cells are
equicorrelated with some ``0 < rho < 1``; under proper data ``rho = 0``. With
the group means profiled out, the likelihood ratio is a function ``chi(rho)``
of the scaled within-group scatter ``S = n * SS / (I * sigma2)``. Its supremum
has a closed form: 1 when ``S`` reaches ``(sqrt(I) - 1) / (sqrt(I) + 1)``,
otherwise ``max(chi(rho_hat), 1)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DomainError, ValidationError
from .kernels import RHO_MAX, clamp_rho, equicorr_logdet
from .summary import CellTable, Grouping, StudySummary

__all__ = [
    "EvidenceReport",
    "PosteriorOdds",
    "group_means",
    "within_group_ss",
    "s_statistic",
    "s_threshold",
    "rho_hat",
    "log_chi",
    "chi",
    "sup_log_chi",
    "evidence_pooled",
    "evidence_pergroup",
    "combine_studies",
    "posterior_odds",
]

LOG_INF = 700.0
DISCRIMINANT_SLACK = 1e-12


@dataclass(frozen=True)
class EvidenceReport:
    model: str
    s_values: tuple[float, ...]
    rho_hats: tuple[float, ...]
    chi_values: tuple[float, ...]
    log_v: float
    degenerate: tuple[bool, ...]
    sigma2: float
    n: float
    grouping_digest: str
    thresholds: tuple[float, ...] = ()

    @property
    def v(self) -> float:
        """Evidential value; ``inf`` for degenerate scatter or overflow."""
        return _exp_or_inf(self.log_v)

    @property
    def is_degenerate(self) -> bool:
        return any(self.degenerate)


def _exp_or_inf(log_value: float) -> float:
    return math.inf if log_value > LOG_INF else math.exp(log_value)


def group_means(table: CellTable, grouping: Grouping) -> list[float]:
    return [float(np.mean([table[c].mean for c in g])) for g in grouping.groups]


def _group_ss(table: CellTable, grouping: Grouping) -> list[float]:
    out = []
    for g in grouping.groups:
        x = np.array([table[c].mean for c in g])
        out.append(float(np.sum((x - x.mean()) ** 2)))
    return out


def within_group_ss(table: CellTable, grouping: Grouping) -> float:
    """Sum over groups of squared deviations of cell means from their group mean."""
    return float(sum(_group_ss(table, grouping)))


def s_statistic(ss: float, dim: int, n: float, sigma2: float) -> float:
    if not (sigma2 > 0 and n > 0 and dim >= 1 and ss >= 0):
        raise DomainError("need ss >= 0, dim >= 1, n > 0 and sigma2 > 0")
    return n * ss / (dim * sigma2)


def s_threshold(dim: int) -> float:
    r = math.sqrt(dim)
    return (r - 1.0) / (r + 1.0)


def rho_hat(s: float, dim: int) -> float | None:
    """Interior stationary point of chi, or ``None`` when ``s`` reaches the threshold."""
    if dim < 2:
        raise DomainError("correlation is undefined for a single cell")
    if s < 0:
        raise DomainError("S must be nonnegative")
    if s >= s_threshold(dim):
        return None
    disc = 1.0 - 4.0 * s / ((dim - 1) * (1.0 - s) ** 2)
    if disc < 0:
        if disc < -DISCRIMINANT_SLACK:
            return None
        disc = 0.0
    return 0.5 * (1.0 - s) * (1.0 + math.sqrt(disc))


def log_chi(rho, ss: float, dim: int, n: float, sigma2: float):
    """log of the profile likelihood ratio at correlation ``rho`` (vectorized in rho)."""
    if not (sigma2 > 0 and n > 0 and ss >= 0):
        raise DomainError("need ss >= 0, n > 0 and sigma2 > 0")
    r, _ = clamp_rho(rho)
    return -0.5 * equicorr_logdet(dim, r) - n * r * ss / (2.0 * sigma2 * (1.0 - r))


def chi(rho, ss: float, dim: int, n: float, sigma2: float):
    return np.exp(log_chi(rho, ss, dim, n, sigma2))


def sup_log_chi(ss: float, dim: int, n: float, sigma2: float):
    """Closed-form supremum of log chi over [0, 1).

    Returns ``(log_v, s, rho_star, degenerate)``; ``rho_star`` is the maximizer
    (0 when the supremum is attained at independence). ``degenerate`` marks zero
    scatter (infinite value) or a maximizer clamped just below 1.
    """
    if dim < 2:
        raise DomainError("correlation is undefined for a single cell")
    s = s_statistic(ss, dim, n, sigma2)
    if ss == 0:
        return math.inf, s, 1.0, True
    r = rho_hat(s, dim)
    if r is None:
        return 0.0, s, 0.0, False
    clamped = r > RHO_MAX
    r = min(r, RHO_MAX)
    lc = float(log_chi(r, ss, dim, n, sigma2))
    if lc <= 0.0:
        return 0.0, s, 0.0, False
    return lc, s, r, clamped


def _resolve_n(study: StudySummary, n: float | None) -> float:
    if n is None:
        return study.n
    if not n > 0:
        raise DomainError("per-cell count must be positive")
    return n


def evidence_pooled(study: StudySummary, sigma2: float, n: float | None = None) -> EvidenceReport:
    """Evidential value with one correlation shared by all cells."""
    if not sigma2 > 0:
        raise DomainError("sigma2 must be positive")
    n = _resolve_n(study, n)
    dim = len(study.table.cells)
    ss = within_group_ss(study.table, study.grouping)
    log_v, s, r, degen = sup_log_chi(ss, dim, n, sigma2)
    return EvidenceReport(
        model="pooled",
        s_values=(s,),
        rho_hats=(r,),
        chi_values=(_exp_or_inf(log_v),),
        log_v=log_v,
        degenerate=(degen,),
        sigma2=sigma2,
        n=n,
        grouping_digest=study.grouping.digest(),
        thresholds=(s_threshold(dim),),
    )


def evidence_pergroup(study: StudySummary, sigma2: float, n: float | None = None) -> EvidenceReport:
    """Evidential value with a separate correlation per group, groups independent."""
    if not sigma2 > 0:
        raise DomainError("sigma2 must be positive")
    n = _resolve_n(study, n)
    for k, g in enumerate(study.grouping.groups):
        if len(g) < 2:
            raise ValidationError(f"group {k} has a single cell; per-group model needs >= 2", g)
    s_vals, rhos, chis, degen, thr = [], [], [], [], []
    log_v = 0.0
    for g, ss in zip(study.grouping.groups, _group_ss(study.table, study.grouping)):
        lv, s, r, d = sup_log_chi(ss, len(g), n, sigma2)
        s_vals.append(s)
        rhos.append(r)
        chis.append(_exp_or_inf(lv))
        degen.append(d)
        thr.append(s_threshold(len(g)))
        log_v += lv
    return EvidenceReport(
        model="per-group",
        s_values=tuple(s_vals),
        rho_hats=tuple(rhos),
        chi_values=tuple(chis),
        log_v=log_v,
        degenerate=tuple(degen),
        sigma2=sigma2,
        n=n,
        grouping_digest=study.grouping.digest(),
        thresholds=tuple(thr),
    )


def combine_studies(values: Sequence[float]) -> float:
    """Multiply evidential values of independent studies."""
    vals = [float(v) for v in values]
    if not vals:
        raise DomainError("nothing to combine")
    bad = [v for v in vals if math.isnan(v) or v < 1.0]
    if bad:
        raise DomainError(f"evidential values must be >= 1, got {bad}")
    if any(math.isinf(v) for v in vals):
        return math.inf
    return math.exp(sum(math.log(v) for v in vals))


@dataclass(frozen=True)
class PosteriorOdds:
    prior: float
    v: float
    posterior: float = field(init=False)
    exceeds_one: bool = field(init=False)

    def __post_init__(self):
        if not self.prior > 0:
            raise DomainError("prior odds must be positive")
        post = self.prior * self.v
        object.__setattr__(self, "posterior", post)
        object.__setattr__(self, "exceeds_one", post > 1.0)


def posterior_odds(prior: float, v: float) -> PosteriorOdds:
    """Prior odds times evidential value; flags posterior odds above 1."""
    return PosteriorOdds(prior, v)
