"""Orchestration behind the CLI commands; every function returns a JSON-ready dict."""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from . import __version__
from .errors import UnresolvableError, InputError
from .evidence import (
    EvidenceReport,
    combine_studies,
    evidence_pergroup,
    evidence_pooled,
    posterior_odds,
    within_group_ss,
)
from .simulation import error_correlation, fabricate, mse_estimate, null_calibration
from .summary import StudySummary
from .variance import VarianceRecovery, recover_sigma2, worst_case_table

SCHEMA = "anova-evidence-report/1"
MODELS = ("pooled", "per-group", "both")


def num(x):
    """JSON-safe number: infinities become the string 'infinity'."""
    if x is None:
        return None
    x = float(x)
    if math.isinf(x):
        return "infinity" if x > 0 else "-infinity"
    if math.isnan(x):
        return None
    return x


def parse_num(x) -> float:
    if isinstance(x, str):
        s = x.strip().lower()
        if s in ("infinity", "inf", "+inf"):
            return math.inf
        return float(s)
    return float(x)


def _header(command: str) -> dict:
    return {"schema": SCHEMA, "version": __version__, "command": command}


def resolve_sigma2(study: StudySummary, override: float | None = None):
    """Pick sigma^2: command-line value, then the study's override, then F recovery.

    Returns ``(value, source, recovery)``.
    """
    recovery = recover_sigma2(study.table, study.f_stats) if study.f_stats else None
    if override is not None:
        if not override > 0:
            raise InputError("--sigma2 must be positive")
        return float(override), "flag", recovery
    if study.sigma2_override is not None:
        return study.sigma2_override, "study override", recovery
    if recovery is not None and recovery.estimate is not None:
        return recovery.estimate.value, "f-statistics", recovery
    raise UnresolvableError(
        "cannot determine sigma^2: no --sigma2, no sigma2_override and no usable F-statistics"
    )


def evidence_dict(rep: EvidenceReport) -> dict:
    return {
        "v": num(rep.v),
        "log_v": num(rep.log_v),
        "s": [num(s) for s in rep.s_values],
        "threshold": [num(t) for t in rep.thresholds],
        "rho_hat": [num(r) for r in rep.rho_hats],
        "chi": [num(c) for c in rep.chi_values],
        "degenerate": list(rep.degenerate),
    }


def recovery_dict(rec: VarianceRecovery) -> dict:
    rows = []
    for e in rec.entries:
        r = e.record
        rows.append({
            "label": r.describe(),
            "effect": list(r.effect),
            "df1": r.df1,
            "df2": r.df2,
            "f": r.value,
            "subset": {k: list(v) for k, v in r.subset},
            "pool": r.pool,
            "excluded": r.exclude,
            "mean_square": num(e.mean_square.value) if e.mean_square else None,
            "m_per_cell": num(e.mean_square.m_per_cell) if e.mean_square else None,
            "sigma2": num(e.sigma2),
            "interval": [num(v) for v in e.interval] if e.interval else None,
            "outlier": e.outlier,
            "implausible": e.implausible,
            "error": e.error,
        })
    est = rec.estimate
    return {
        "records": rows,
        "pooled": None if est is None else {
            "value": num(est.value),
            "interval": [num(v) for v in est.interval] if est.interval else None,
            "method": est.method,
            "n_sources": len(est.sources),
        },
    }


def _evidence(study, sigma2, n, model):
    out = {}
    if model in ("pooled", "both"):
        out["pooled"] = evidence_pooled(study, sigma2, n)
    if model in ("per-group", "both"):
        out["per_group"] = evidence_pergroup(study, sigma2, n)
    return out


def analyze(study: StudySummary, model="both", sigma2=None, n=None, prior_odds=None) -> dict:
    if model not in MODELS:
        raise InputError(f"model must be one of {MODELS}")
    s2, source, recovery = resolve_sigma2(study, sigma2)
    n_used = study.n if n is None else n
    reports = _evidence(study, s2, n_used, model)
    doc = _header("analyze")
    doc["inputs"] = {
        "cells": len(study.table.cells),
        "groups": study.grouping.K,
        "group_sizes": list(study.grouping.sizes),
        "grouping": study.grouping.digest(),
        "n": num(n_used),
        "n_source": "study" if n is None else "flag",
        "within_group_ss": num(within_group_ss(study.table, study.grouping)),
    }
    doc["sigma2"] = {"value": num(s2), "source": source,
                     "order": "flag > study override > f-statistics"}
    if recovery is not None:
        doc["sigma2"]["recovery"] = recovery_dict(recovery)
    doc["evidence"] = {k: evidence_dict(v) for k, v in reports.items()}
    if prior_odds is not None:
        doc["odds"] = {"prior": num(prior_odds)}
        for k, rep in reports.items():
            po = posterior_odds(prior_odds, rep.v)
            doc["odds"][k] = {"posterior": num(po.posterior), "exceeds_one": po.exceeds_one}
    doc["flags"] = {
        "degenerate": any(r.is_degenerate for r in reports.values()),
        "sigma2_outliers": [] if recovery is None else
        [e.record.describe() for e in recovery.entries if e.outlier],
    }
    return doc


def sigma(study: StudySummary) -> dict:
    if not study.f_stats:
        raise UnresolvableError("study has no F-statistics")
    rec = recover_sigma2(study.table, study.f_stats)
    doc = _header("sigma")
    doc["sigma2"] = recovery_dict(rec)
    doc["flags"] = {
        "errors": [e.record.describe() for e in rec.entries if e.error],
        "outliers": [e.record.describe() for e in rec.entries if e.outlier],
    }
    if rec.estimate is None:
        raise UnresolvableError("no F-statistic yielded a usable variance estimate")
    return doc


def sensitivity(study: StudySummary, sigma2=None, worst_sigma2=None, n=None) -> dict:
    s2, source, _ = resolve_sigma2(study, sigma2)
    worst = worst_case_table(study.table, study.grouping)
    worst_study = StudySummary(worst, study.grouping, study.f_stats, None)
    if worst_sigma2 is not None:
        if not worst_sigma2 > 0:
            raise InputError("--worst-sigma2 must be positive")
        ws2, wsource = float(worst_sigma2), "flag"
    else:
        rec = recover_sigma2(worst, study.f_stats, intervals=False) if study.f_stats else None
        if rec is not None and rec.estimate is not None:
            ws2, wsource = rec.estimate.value, "f-statistics on worst-case table"
        else:
            ws2, wsource = s2, "same as original"
    n_used = study.n if n is None else n
    per_group_ok = all(len(g) >= 2 for g in study.grouping.groups)
    model = "both" if per_group_ok else "pooled"
    orig = _evidence(study, s2, n_used, model)
    wc = _evidence(worst_study, ws2, n_used, model)
    doc = _header("sensitivity")
    doc["inputs"] = {"cells": len(study.table.cells), "groups": study.grouping.K,
                     "rounding_decimals": study.table.rounding_decimals, "n": num(n_used)}
    doc["sensitivity"] = {
        "worst_case_table": [{"id": c.id, "original": o.mean, "worst_case": c.mean}
                             for c, o in zip(worst.cells, study.table.cells)],
        "within_group_ss": {"original": num(within_group_ss(study.table, study.grouping)),
                            "worst_case": num(within_group_ss(worst, study.grouping))},
        "sigma2": {"original": {"value": num(s2), "source": source},
                   "worst_case": {"value": num(ws2), "source": wsource}},
        "evidence": {
            "original": {k: evidence_dict(v) for k, v in orig.items()},
            "worst_case": {k: evidence_dict(v) for k, v in wc.items()},
        },
    }
    doc["flags"] = {"degenerate": any(r.is_degenerate for r in [*orig.values(), *wc.values()])}
    return doc


def combine(values: Sequence[float], prior_odds=None) -> dict:
    v = combine_studies(values)
    doc = _header("combine")
    doc["inputs"] = {"values": [num(x) for x in values]}
    doc["evidence"] = {"combined": {"v": num(v)}}
    if prior_odds is not None:
        po = posterior_odds(prior_odds, v)
        doc["odds"] = {"prior": num(prior_odds), "posterior": num(po.posterior),
                       "exceeds_one": po.exceeds_one}
    doc["flags"] = {"infinite": math.isinf(v)}
    return doc


def simulate(I: int, n: int, rho: float, sigma: float = 1.0, mu=0.0, seed: int = 0):
    """Returns ``(report, dataset)``."""
    data = fabricate(I, n, np.broadcast_to(np.asarray(mu, float), (I,)), sigma, rho, seed)
    doc = _header("simulate")
    doc["inputs"] = {"I": I, "n": n, "rho": rho, "sigma": sigma, "seed": seed,
                     "generator": data.generator}
    doc["summary"] = {
        "empirical_error_correlation": num(error_correlation(data)) if I >= 2 else None,
        "error_variance": num(float(np.var(data.values - np.asarray(data.mu)[:, None]))),
        "mse": num(mse_estimate(data)),
        "cell_means": [num(m) for m in data.cell_means],
    }
    dataset = {"schema": "anova-evidence-dataset/1", "seed": seed, "generator": data.generator,
               "mu": list(data.mu), "sigma2": data.sigma2, "rho": rho,
               "values": data.values.tolist()}
    return doc, dataset


def calibrate(study: StudySummary, sigma2=None, reps=1000, seed=0, rho=0.0, v0=None, workers=1):
    s2, source, _ = resolve_sigma2(study, sigma2)
    res = null_calibration(study, s2, reps, seed, rho=rho, workers=workers)
    observed = {"pooled": evidence_pooled(study, s2).v}
    if res.v_pergroup is not None:
        observed["per_group"] = evidence_pergroup(study, s2).v
    doc = _header("calibrate")
    doc["inputs"] = {"reps": reps, "seed": seed, "rho": rho, "sigma2": num(s2),
                     "sigma2_source": source, "n_simulated": int(round(study.n))}
    models = {"pooled": res.v_pooled}
    if res.v_pergroup is not None:
        models["per_group"] = res.v_pergroup
    cal = {}
    for name, arr in models.items():
        ref = observed[name] if v0 is None else v0
        p, se = res.exceedance(ref, "pooled" if name == "pooled" else "per-group")
        cal[name] = {
            "observed_v": num(observed[name]),
            "reference_v": num(ref),
            "p_exceed": p,
            "p_exceed_se": se,
            "p_v_at_least_1": float(np.mean(arr >= 1.0)),
            "quantiles": {q: num(np.quantile(arr, float(q))) for q in ("0.5", "0.9", "0.95", "0.99")},
        }
    doc["calibration"] = cal
    doc["flags"] = {"coarse": reps < 1000}
    return doc
