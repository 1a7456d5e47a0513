"""Recover the error variance from published F-statistics and cell means.

For a balanced full-factorial layout with ``M`` observations per cell, the mean
square of an effect is ``M * sum(residual**2) / df`` where the residual is the
inclusion-exclusion contrast of the cell means for that effect. Dividing by the
published F value gives the mean square for error, i.e. an estimate of sigma^2.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import lsq_linear

from .errors import DfMismatchError, EnumerationLimitError, ValidationError
from .summary import CellTable, FStatRecord, Grouping, rounding_box

__all__ = [
    "EffectMeanSquare",
    "VarianceEstimate",
    "RecoveredVariance",
    "VarianceRecovery",
    "effect_operator",
    "effect_mean_square",
    "sigma2_from_f",
    "sigma2_interval",
    "pool_sigma2",
    "recover_sigma2",
    "worst_case_table",
    "within_group_ss_of",
]

MAX_VERTEX_CELLS = 25
OUTLIER_RATIO = 0.5
IMPLAUSIBLE_F = 1e4


@dataclass(frozen=True)
class EffectMeanSquare:
    effect: tuple[str, ...]
    df: int
    value: float
    m_per_cell: float


@dataclass(frozen=True)
class VarianceEstimate:
    value: float
    interval: tuple[float, float] | None = None
    sources: tuple[FStatRecord, ...] = ()
    method: str = "mean"

    def __post_init__(self):
        if not self.value > 0:
            raise ValidationError(f"variance estimate must be positive, got {self.value}")
        if self.interval is not None:
            lo, hi = self.interval
            if not (0 < lo <= self.value * (1 + 1e-12) and self.value <= hi * (1 + 1e-12)):
                raise ValidationError(f"interval {self.interval} does not bracket {self.value}")


def _block(table: CellTable, subset: Mapping[str, Sequence[str]], effect: Sequence[str]):
    names, ids, means = table.subset_block(subset)
    for e in effect:
        if e not in table.design.names:
            raise ValidationError(f"effect names unknown factor {e!r}")
        if e not in names:
            raise ValidationError(f"effect factor {e!r} has fewer than 2 levels in the subset")
    if len(set(effect)) != len(effect):
        raise ValidationError(f"effect {list(effect)} repeats a factor")
    axes = tuple(names.index(e) for e in effect)
    return names, ids, means, axes


def _residual(x: np.ndarray, axes: tuple[int, ...]) -> np.ndarray:
    """Inclusion-exclusion contrast of ``x`` for the interaction of ``axes``."""
    out = np.zeros_like(x)
    others = tuple(a for a in range(x.ndim) if a not in axes)
    for r in range(len(axes) + 1):
        for keep in itertools.combinations(axes, r):
            drop = others + tuple(a for a in axes if a not in keep)
            sign = (-1) ** (len(axes) - r)
            out = out + sign * x.mean(axis=drop, keepdims=True) if drop else out + sign * x
    return np.broadcast_to(out, x.shape)


def effect_operator(table: CellTable, subset, effect):
    """Linear map P with MS(x) = scale * ||P x||^2 over the subset cells.

    Returns ``(P, ids, df)`` where ``ids`` lists the subset cells in the column order.
    """
    names, ids, means, axes = _block(table, subset, effect)
    shape = means.shape
    size = means.size
    cols = []
    for k in range(size):
        e = np.zeros(size)
        e[k] = 1.0
        cols.append(_residual(e.reshape(shape), axes).ravel())
    df = math.prod(shape[a] - 1 for a in axes)
    return np.column_stack(cols), list(ids.ravel()), df


def effect_mean_square(
    table: CellTable,
    subset: Mapping[str, Sequence[str]],
    effect: Sequence[str],
    subset_observations: float,
) -> EffectMeanSquare:
    """Mean square of ``effect`` from the cell means of a balanced sub-design."""
    names, ids, means, axes = _block(table, subset, effect)
    m = subset_observations / means.size
    r = _residual(means, axes)
    df = math.prod(means.shape[a] - 1 for a in axes)
    return EffectMeanSquare(tuple(effect), df, float(m * np.sum(r * r) / df), m)


def sigma2_from_f(ms: EffectMeanSquare, f: FStatRecord) -> float:
    if set(ms.effect) != set(f.effect):
        raise DfMismatchError(f"mean square for {ms.effect} paired with F for {f.effect}")
    if ms.df != f.df1:
        raise DfMismatchError(
            f"{f.describe()}: effect {'x'.join(f.effect)} has {ms.df} df in this subset"
        )
    return ms.value / f.value


def _enumerate_max(P: np.ndarray, lo: np.ndarray, hi: np.ndarray):
    """Maximize ||P x||^2 over the box by enumerating its vertices."""
    free = np.flatnonzero(hi > lo)
    if free.size > MAX_VERTEX_CELLS:
        raise EnumerationLimitError(
            f"{free.size} free cells exceed the vertex enumeration bound of {MAX_VERTEX_CELLS}; "
            "split the block into smaller groups"
        )
    base = P @ lo
    Pf = P[:, free] * (hi - lo)[free]
    m = free.size
    best_val, best_bits = -np.inf, 0
    chunk = 1 << min(m, 16)
    for start in range(0, 1 << m, chunk):
        codes = np.arange(start, min(start + chunk, 1 << m))
        bits = ((codes[:, None] >> np.arange(m)) & 1).astype(float)
        vals = np.sum((base + bits @ Pf.T) ** 2, axis=1)
        k = int(np.argmax(np.round(vals, 12)))
        if np.round(vals[k], 12) > np.round(best_val, 12):
            best_val, best_bits = vals[k], int(codes[k])
    x = lo.copy()
    for j, idx in enumerate(free):
        if (best_bits >> j) & 1:
            x[idx] = hi[idx]
    return float(best_val), x


def sigma2_interval(table: CellTable, subset, effect, f: FStatRecord) -> tuple[float, float]:
    """Range of recovered sigma^2 as the true means vary over their rounding box.

    The maximum sits on a vertex (convex objective) and is found by enumeration;
    the minimum is a bounded linear least-squares problem.
    """
    P, ids, df = effect_operator(table, subset, effect)
    if df != f.df1:
        raise DfMismatchError(f"{f.describe()}: effect has {df} df in this subset")
    box = dict(zip(table.ids, rounding_box(table)))
    lo = np.array([box[i][0] for i in ids])
    hi = np.array([box[i][1] for i in ids])
    m = f.subset_observations / len(ids)
    scale = m / df / f.value
    if np.all(hi == lo):
        v = scale * float(np.sum((P @ lo) ** 2))
        return v, v
    vmax, _ = _enumerate_max(P, lo, hi)
    free = hi > lo
    res = lsq_linear(P[:, free], -(P[:, ~free] @ lo[~free]), bounds=(lo[free], hi[free]),
                     method="bvls", tol=1e-14)
    vmin = float(np.sum((P[:, free] @ res.x + P[:, ~free] @ lo[~free]) ** 2))
    return scale * vmin, scale * vmax


def pool_sigma2(estimates: Sequence[float], weights: Sequence[float] | None = None) -> float:
    """Unweighted mean of variance estimates, or a weighted mean when weights are given."""
    est = [float(e) for e in estimates]
    if not est:
        raise ValidationError("nothing to pool")
    if any(not e > 0 for e in est):
        raise ValidationError("variance estimates must be positive")
    if weights is None:
        return sum(est) / len(est)
    w = [float(x) for x in weights]
    if len(w) != len(est) or any(not x > 0 for x in w):
        raise ValidationError("weights must be positive and match the estimates")
    return sum(a * b for a, b in zip(est, w)) / sum(w)


@dataclass
class RecoveredVariance:
    record: FStatRecord
    mean_square: EffectMeanSquare | None = None
    sigma2: float | None = None
    interval: tuple[float, float] | None = None
    error: str | None = None
    outlier: bool = False
    implausible: bool = False

    @property
    def usable(self) -> bool:
        return self.sigma2 is not None and not self.record.exclude


@dataclass
class VarianceRecovery:
    entries: list[RecoveredVariance] = field(default_factory=list)
    estimate: VarianceEstimate | None = None


def _pool_by_label(items: Sequence[tuple[str | None, float]]) -> float:
    pools: dict = {}
    for k, (label, v) in enumerate(items):
        pools.setdefault(label if label is not None else ("#", k), []).append(v)
    return pool_sigma2([pool_sigma2(v) for v in pools.values()])


def recover_sigma2(table: CellTable, f_stats: Sequence[FStatRecord], intervals: bool = True) -> VarianceRecovery:
    """Recover sigma^2 from every F record and pool the usable ones.

    Records sharing a ``pool`` label are averaged first; the per-label means are
    then averaged. Records flagged ``exclude`` are reported but not pooled. A
    record whose estimate deviates by more than 50% from the pooled remainder is
    marked as an outlier.
    """
    out = VarianceRecovery()
    for rec in f_stats:
        entry = RecoveredVariance(rec)
        try:
            ms = effect_mean_square(table, rec.subset_dict, rec.effect, rec.subset_observations)
            entry.mean_square = ms
            entry.sigma2 = sigma2_from_f(ms, rec)
            if intervals:
                entry.interval = sigma2_interval(table, rec.subset_dict, rec.effect, rec)
            entry.implausible = rec.value > IMPLAUSIBLE_F or not entry.sigma2 > 0
        except (DfMismatchError, ValidationError, EnumerationLimitError) as exc:
            entry.error = str(exc)
            entry.sigma2 = entry.sigma2 if isinstance(exc, EnumerationLimitError) else None
        out.entries.append(entry)

    usable = [e for e in out.entries if e.usable and e.sigma2 > 0]
    for e in out.entries:
        if e.sigma2 is None or not e.sigma2 > 0:
            continue
        rest = [(o.record.pool, o.sigma2) for o in usable if o is not e]
        if rest:
            ref = _pool_by_label(rest)
            e.outlier = abs(e.sigma2 / ref - 1.0) > OUTLIER_RATIO
    if usable:
        value = _pool_by_label([(e.record.pool, e.sigma2) for e in usable])
        interval = None
        if all(e.interval is not None for e in usable):
            interval = (
                _pool_by_label([(e.record.pool, e.interval[0]) for e in usable]),
                _pool_by_label([(e.record.pool, e.interval[1]) for e in usable]),
            )
            if not interval[0] > 0:
                interval = None
        out.estimate = VarianceEstimate(
            value, interval, tuple(e.record for e in usable), "mean of per-pool means"
        )
    return out


def within_group_ss_of(values: np.ndarray) -> float:
    return float(np.sum((values - values.mean()) ** 2))


def worst_case_table(table: CellTable, grouping: Grouping, max_group: int = MAX_VERTEX_CELLS) -> CellTable:
    """Move every cell mean within its rounding interval to maximize within-group scatter.

    The within-group sum of squares is convex in the means, so each group's
    maximizer is a vertex of its box; groups are independent and enumerated
    separately. The returned table is marked exact.
    """
    box = dict(zip(table.ids, rounding_box(table)))
    new = {}
    for k, g in enumerate(grouping.groups):
        if len(g) > max_group:
            raise EnumerationLimitError(
                f"group {k} has {len(g)} cells, above the enumeration bound of {max_group}; "
                "subdivide the group"
            )
        lo = np.array([box[c][0] for c in g])
        hi = np.array([box[c][1] for c in g])
        centering = np.eye(len(g)) - 1.0 / len(g)
        _, x = _enumerate_max(centering, lo, hi)
        new.update(zip(g, x))
    return table.with_means(new, rounding_decimals=None)
