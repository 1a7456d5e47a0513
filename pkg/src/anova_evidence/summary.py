"""Data model for published ANOVA summaries and the study-file reader/writer.

A study file is a UTF-8 JSON document::

    {
      "design": [{"name": "prime", "levels": ["positive", "negative"]}, ...],
      "cells": [{"id": "p1", "coords": {"prime": "positive", ...}, "mean": 2.3}, ...],
      "total_observations": 338,
      "rounding_decimals": 1,            # or "exact"
      "groups": [["p1", "p4"], ...],
      "f_statistics": [{"effect": ["prime"], "df1": 2, "df2": 162, "value": 11.49,
                        "subset": {"person": ["personal"]}, "subset_observations": 168}],
      "sigma2_override": 1.134           # optional
    }

Unknown keys are rejected everywhere.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import jsonschema
import numpy as np

from .errors import SchemaError, ValidationError

__all__ = [
    "Factor",
    "FactorDesign",
    "Cell",
    "CellTable",
    "Grouping",
    "FStatRecord",
    "StudySummary",
    "parse_study",
    "load_study",
    "dump_study",
    "serialize_study",
    "per_cell_count",
    "rounding_box",
]


@dataclass(frozen=True)
class Factor:
    name: str
    levels: tuple[str, ...]


@dataclass(frozen=True)
class FactorDesign:
    factors: tuple[Factor, ...]

    def __post_init__(self):
        if not self.factors:
            raise ValidationError("design needs at least one factor")
        names = [f.name for f in self.factors]
        if len(set(names)) != len(names):
            raise ValidationError("duplicate factor names", names)
        for f in self.factors:
            if len(f.levels) < 2:
                raise ValidationError(f"factor {f.name!r} needs at least 2 levels")
            if len(set(f.levels)) != len(f.levels):
                raise ValidationError(f"factor {f.name!r} has duplicate levels")

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(f.name for f in self.factors)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(len(f.levels) for f in self.factors)

    @property
    def n_cells(self) -> int:
        return math.prod(self.shape)

    def factor(self, name: str) -> Factor:
        for f in self.factors:
            if f.name == name:
                return f
        raise ValidationError(f"unknown factor {name!r}")

    def default_cell_id(self, coords: Sequence[str]) -> str:
        return ",".join(f"{f.name}={lvl}" for f, lvl in zip(self.factors, coords))


@dataclass(frozen=True)
class Cell:
    id: str
    coords: tuple[str, ...]
    mean: float


@dataclass(frozen=True)
class CellTable:
    """Balanced, complete table of published cell means.

    ``rounding_decimals`` is ``None`` when the means are to be taken as exact.
    """

    design: FactorDesign
    cells: tuple[Cell, ...]
    total_observations: float
    rounding_decimals: int | None = None
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        ids = [c.id for c in self.cells]
        dup = sorted({i for i in ids if ids.count(i) > 1})
        if dup:
            raise ValidationError("duplicate cell ids", dup)
        seen = {}
        for c in self.cells:
            if len(c.coords) != len(self.design.factors):
                raise ValidationError("cell coordinates do not match the design", [c.id])
            for f, lvl in zip(self.design.factors, c.coords):
                if lvl not in f.levels:
                    raise ValidationError(f"unknown level {lvl!r} of factor {f.name!r}", [c.id])
            if c.coords in seen:
                raise ValidationError("two cells share coordinates", [seen[c.coords], c.id])
            seen[c.coords] = c.id
            if not math.isfinite(c.mean):
                raise ValidationError("cell mean is not finite", [c.id])
        if len(self.cells) != self.design.n_cells:
            missing = [
                self.design.default_cell_id(co)
                for co in itertools.product(*(f.levels for f in self.design.factors))
                if co not in seen
            ]
            raise ValidationError("design is incomplete, missing cells", missing)
        if not self.total_observations > 0:
            raise ValidationError("total_observations must be positive")
        if self.rounding_decimals is not None and self.rounding_decimals < 0:
            raise ValidationError("rounding_decimals must be nonnegative")
        if not per_cell_count(self) > 1:
            raise ValidationError(
                f"per-cell count {per_cell_count(self):g} must exceed 1"
            )
        object.__setattr__(self, "_index", {c.id: c for c in self.cells})

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(c.id for c in self.cells)

    @property
    def means(self) -> np.ndarray:
        return np.array([c.mean for c in self.cells], dtype=float)

    def __getitem__(self, cell_id: str) -> Cell:
        return self._index[cell_id]

    def with_means(self, means: Mapping[str, float] | Sequence[float], rounding_decimals="keep"):
        """Copy of the table with new cell means (by id mapping or in cell order)."""
        if isinstance(means, Mapping):
            new = [float(means.get(c.id, c.mean)) for c in self.cells]
        else:
            new = [float(m) for m in means]
        d = self.rounding_decimals if rounding_decimals == "keep" else rounding_decimals
        cells = tuple(Cell(c.id, c.coords, m) for c, m in zip(self.cells, new))
        return CellTable(self.design, cells, self.total_observations, d)

    def subset_block(self, subset: Mapping[str, Sequence[str]]):
        """Cells matching a factor-level restriction, arranged as a dense array.

        Factors restricted to a single level are dropped from the block's axes.
        Returns ``(factor_names, ids, means)`` where ``ids`` and ``means`` are
        arrays shaped by the remaining factors.
        """
        for name, lvls in subset.items():
            f = self.design.factor(name)
            bad = [lv for lv in lvls if lv not in f.levels]
            if bad or not lvls:
                raise ValidationError(f"subset restriction on {name!r} names unknown levels {bad}")
        axes = []
        for f in self.design.factors:
            lvls = tuple(subset.get(f.name, f.levels))
            axes.append((f.name, lvls))
        kept = [name for name, lvls in axes if len(lvls) > 1]
        shape = tuple(len(lvls) for _, lvls in axes if len(lvls) > 1)
        by_coords = {c.coords: c for c in self.cells}
        ids, vals = [], []
        for co in itertools.product(*(lvls for _, lvls in axes)):
            c = by_coords[co]
            ids.append(c.id)
            vals.append(c.mean)
        return (
            tuple(kept),
            np.array(ids, dtype=object).reshape(shape),
            np.array(vals, dtype=float).reshape(shape),
        )


@dataclass(frozen=True)
class Grouping:
    """Ordered partition of cell ids into groups sharing a population mean."""

    groups: tuple[tuple[str, ...], ...]

    def __post_init__(self):
        if not self.groups:
            raise ValidationError("grouping needs at least one group")
        for k, g in enumerate(self.groups):
            if not g:
                raise ValidationError(f"group {k} is empty")
        flat = [i for g in self.groups for i in g]
        dup = sorted({i for i in flat if flat.count(i) > 1})
        if dup:
            raise ValidationError("cells assigned to more than one group", dup)

    @property
    def K(self) -> int:
        return len(self.groups)

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(len(g) for g in self.groups)

    def check_partition(self, ids: Sequence[str]) -> None:
        flat = {i for g in self.groups for i in g}
        unknown = sorted(flat - set(ids))
        if unknown:
            raise ValidationError("groups reference unknown cells", unknown)
        missing = [i for i in ids if i not in flat]
        if missing:
            raise ValidationError("groups do not cover every cell, missing", missing)

    def indices(self, ids: Sequence[str]) -> list[list[int]]:
        pos = {cid: k for k, cid in enumerate(ids)}
        return [[pos[c] for c in g] for g in self.groups]

    def digest(self) -> str:
        return "|".join(",".join(g) for g in self.groups)


@dataclass(frozen=True)
class FStatRecord:
    """One published F-statistic together with the cells its ANOVA covered.

    ``subset`` maps factor names to the levels retained; factors not listed keep
    all their levels. ``pool`` labels records whose recovered variances are
    averaged together before pooling across labels; ``exclude`` keeps a record
    out of the pooled estimate (e.g. a suspected misprint).
    """

    effect: tuple[str, ...]
    df1: int
    df2: int
    value: float
    subset: tuple[tuple[str, tuple[str, ...]], ...] = ()
    subset_observations: float = 0.0
    label: str | None = None
    pool: str | None = None
    exclude: bool = False

    def __post_init__(self):
        if not self.effect:
            raise ValidationError("F-statistic effect must name at least one factor")
        if self.df1 < 1 or self.df2 < 1:
            raise ValidationError("F-statistic degrees of freedom must be positive")
        if not self.value > 0:
            raise ValidationError(f"F-statistic value must be positive, got {self.value}")
        if not self.subset_observations > 0:
            raise ValidationError("subset_observations must be positive")

    @property
    def subset_dict(self) -> dict[str, tuple[str, ...]]:
        return dict(self.subset)

    def describe(self) -> str:
        name = self.label or "x".join(self.effect)
        return f"{name} F({self.df1},{self.df2})={self.value:g}"


@dataclass(frozen=True)
class StudySummary:
    table: CellTable
    grouping: Grouping
    f_stats: tuple[FStatRecord, ...] = ()
    sigma2_override: float | None = None

    def __post_init__(self):
        self.grouping.check_partition(self.table.ids)
        if self.sigma2_override is not None and not self.sigma2_override > 0:
            raise ValidationError("sigma2_override must be positive")
        names = set(self.table.design.names)
        for rec in self.f_stats:
            unknown = [e for e in rec.effect if e not in names]
            unknown += [s for s, _ in rec.subset if s not in names]
            if unknown:
                raise ValidationError(
                    f"F-statistic {rec.describe()} names unknown factors {sorted(set(unknown))}"
                )

    @property
    def n(self) -> float:
        return per_cell_count(self.table)


def per_cell_count(table: CellTable) -> float:
    """Observations per cell, assuming a uniform allocation (full precision)."""
    return table.total_observations / len(table.cells)


def rounding_box(table: CellTable) -> list[tuple[float, float]]:
    """Closed interval of true cell means consistent with each published value."""
    if table.rounding_decimals is None:
        return [(c.mean, c.mean) for c in table.cells]
    d = table.rounding_decimals
    h = 0.5 * 10.0 ** (-d)
    # one extra decimal removes binary representation noise, e.g. 2.3 - 0.05
    return [(round(c.mean - h, d + 1), round(c.mean + h, d + 1)) for c in table.cells]


_NAME = {"type": "string", "minLength": 1}
_LEVELS = {"type": "array", "items": _NAME, "minItems": 1}

STUDY_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["design", "cells", "total_observations", "rounding_decimals", "groups"],
    "properties": {
        "design": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["name", "levels"],
                "properties": {"name": _NAME, "levels": _LEVELS},
            },
        },
        "cells": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["coords", "mean"],
                "properties": {
                    "id": _NAME,
                    "coords": {"type": "object", "additionalProperties": _NAME},
                    "mean": {"type": "number"},
                },
            },
        },
        "total_observations": {"type": "number", "exclusiveMinimum": 0},
        "rounding_decimals": {
            "oneOf": [{"type": "integer", "minimum": 0}, {"const": "exact"}]
        },
        "groups": {"type": "array", "minItems": 1, "items": {"type": "array", "items": _NAME}},
        "f_statistics": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["effect", "df1", "df2", "value", "subset", "subset_observations"],
                "properties": {
                    "effect": {"type": "array", "items": _NAME, "minItems": 1},
                    "df1": {"type": "integer", "minimum": 1},
                    "df2": {"type": "integer", "minimum": 1},
                    "value": {"type": "number", "exclusiveMinimum": 0},
                    "subset": {"type": "object", "additionalProperties": _LEVELS},
                    "subset_observations": {"type": "number", "exclusiveMinimum": 0},
                    "label": {"type": "string"},
                    "pool": {"type": "string"},
                    "exclude": {"type": "boolean"},
                },
            },
        },
        "sigma2_override": {"type": ["number", "null"], "exclusiveMinimum": 0},
    },
}


def _field_path(err: jsonschema.ValidationError) -> str:
    path = list(err.absolute_path)
    if err.validator == "additionalProperties":
        extra = set(err.instance) - set(err.schema.get("properties", {}))
        path.append(",".join(sorted(extra)))
    elif err.validator == "required":
        missing = [k for k in err.validator_value if k not in err.instance]
        path.extend(missing[:1])
    return ".".join(str(p) for p in path) or "<document>"


def parse_study(document: str | bytes | Mapping) -> StudySummary:
    """Validate a study document (JSON text or decoded mapping) and build a StudySummary."""
    if isinstance(document, (str, bytes)):
        try:
            doc = json.loads(document)
        except json.JSONDecodeError as exc:
            raise SchemaError("<document>", f"invalid JSON: {exc}") from exc
    else:
        doc = document
    validator = jsonschema.Draft202012Validator(STUDY_SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        raise SchemaError(_field_path(err), err.message)

    design = FactorDesign(
        tuple(Factor(f["name"], tuple(f["levels"])) for f in doc["design"])
    )
    cells = []
    for k, c in enumerate(doc["cells"]):
        co = c["coords"]
        if set(co) != set(design.names):
            raise SchemaError(
                f"cells.{k}.coords", f"expected one level for each of {list(design.names)}"
            )
        coords = tuple(co[name] for name in design.names)
        cid = c.get("id") or design.default_cell_id(coords)
        cells.append(Cell(cid, coords, float(c["mean"])))

    rd = doc["rounding_decimals"]
    table = CellTable(
        design,
        tuple(cells),
        float(doc["total_observations"]),
        None if rd == "exact" else int(rd),
    )
    grouping = Grouping(tuple(tuple(g) for g in doc["groups"]))
    f_stats = tuple(
        FStatRecord(
            effect=tuple(r["effect"]),
            df1=int(r["df1"]),
            df2=int(r["df2"]),
            value=float(r["value"]),
            subset=tuple((k, tuple(v)) for k, v in r["subset"].items()),
            subset_observations=float(r["subset_observations"]),
            label=r.get("label"),
            pool=r.get("pool"),
            exclude=bool(r.get("exclude", False)),
        )
        for r in doc.get("f_statistics", [])
    )
    s2 = doc.get("sigma2_override")
    return StudySummary(table, grouping, f_stats, None if s2 is None else float(s2))


def load_study(path: str | Path) -> StudySummary:
    return parse_study(Path(path).read_text(encoding="utf-8"))


def dump_study(study: StudySummary) -> dict:
    """Inverse of :func:`parse_study`, as a JSON-ready mapping."""
    t = study.table
    doc = {
        "design": [{"name": f.name, "levels": list(f.levels)} for f in t.design.factors],
        "cells": [
            {"id": c.id, "coords": dict(zip(t.design.names, c.coords)), "mean": c.mean}
            for c in t.cells
        ],
        "total_observations": t.total_observations,
        "rounding_decimals": "exact" if t.rounding_decimals is None else t.rounding_decimals,
        "groups": [list(g) for g in study.grouping.groups],
        "f_statistics": [],
    }
    for r in study.f_stats:
        rec = {
            "effect": list(r.effect),
            "df1": r.df1,
            "df2": r.df2,
            "value": r.value,
            "subset": {k: list(v) for k, v in r.subset},
            "subset_observations": r.subset_observations,
        }
        if r.label is not None:
            rec["label"] = r.label
        if r.pool is not None:
            rec["pool"] = r.pool
        if r.exclude:
            rec["exclude"] = True
        doc["f_statistics"].append(rec)
    if study.sigma2_override is not None:
        doc["sigma2_override"] = study.sigma2_override
    return doc


def serialize_study(study: StudySummary) -> str:
    return json.dumps(dump_study(study), indent=2)
