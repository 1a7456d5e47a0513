"""Command-line front end.

Exit codes: 0 success, 1 validation or domain error, 2 unresolvable input.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import pipeline
from .errors import InputError, UnresolvableError
from .summary import load_study


def _positive(text):
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {text}")
    return v


def _fmt(x):
    if x is None:
        return "-"
    if isinstance(x, str):
        return x
    if isinstance(x, bool):
        return "yes" if x else "no"
    return f"{x:.4f}"


def _fmt_list(xs):
    return ", ".join(_fmt(x) for x in xs)


def _text_evidence(name, ev, indent="  "):
    lines = [f"{indent}{name}: V = {_fmt(ev['v'])}"]
    lines.append(f"{indent}  S        : {_fmt_list(ev['s'])}  (threshold {_fmt_list(ev['threshold'])})")
    lines.append(f"{indent}  rho_hat  : {_fmt_list(ev['rho_hat'])}")
    lines.append(f"{indent}  chi      : {_fmt_list(ev['chi'])}")
    if any(ev["degenerate"]):
        lines.append(f"{indent}  degenerate: zero within-group scatter, V reported as infinity")
    return lines


def _text_recovery(rec):
    lines = []
    for r in rec["records"]:
        tag = []
        if r["excluded"]:
            tag.append("excluded")
        if r["outlier"]:
            tag.append("outlier")
        if r["implausible"]:
            tag.append("implausibly small")
        if r["error"]:
            lines.append(f"  {r['label']}: ERROR {r['error']}")
            continue
        iv = f" in [{_fmt(r['interval'][0])}, {_fmt(r['interval'][1])}]" if r["interval"] else ""
        lines.append(
            f"  {r['label']}: MS = {_fmt(r['mean_square'])}, sigma2 = {_fmt(r['sigma2'])}{iv}"
            + (f"  [{', '.join(tag)}]" if tag else "")
        )
    if rec["pooled"]:
        p = rec["pooled"]
        iv = f" in [{_fmt(p['interval'][0])}, {_fmt(p['interval'][1])}]" if p["interval"] else ""
        lines.append(f"  pooled sigma2 = {_fmt(p['value'])}{iv}")
    return lines


def render_text(doc: dict) -> str:
    cmd = doc["command"]
    out = [f"anova-evidence {doc['version']} {cmd}"]
    if cmd == "analyze":
        inp = doc["inputs"]
        out.append(f"sigma2 = {_fmt(doc['sigma2']['value'])} (source: {doc['sigma2']['source']}; "
                   f"order {doc['sigma2']['order']})")
        out.append(f"I = {inp['cells']}, K = {inp['groups']}, n = {_fmt(inp['n'])}, "
                   f"within-group SS = {_fmt(inp['within_group_ss'])}")
        for name, ev in doc["evidence"].items():
            out.extend(_text_evidence(name, ev))
        if "odds" in doc:
            for name, o in doc["odds"].items():
                if name == "prior":
                    continue
                out.append(f"  posterior odds ({name}) = prior {_fmt(doc['odds']['prior'])} x V = "
                           f"{_fmt(o['posterior'])}; exceeds 1: {_fmt(o['exceeds_one'])}")
    elif cmd == "sigma":
        out.extend(_text_recovery(doc["sigma2"]))
    elif cmd == "sensitivity":
        s = doc["sensitivity"]
        out.append("cell                 original  worst-case")
        for row in s["worst_case_table"]:
            out.append(f"  {row['id']:<18} {row['original']:>8}  {row['worst_case']:>10}")
        out.append(f"within-group SS: {_fmt(s['within_group_ss']['original'])} -> "
                   f"{_fmt(s['within_group_ss']['worst_case'])}")
        for which in ("original", "worst_case"):
            sg = s["sigma2"][which]
            out.append(f"{which}: sigma2 = {_fmt(sg['value'])} ({sg['source']})")
            for name, ev in s["evidence"][which].items():
                out.extend(_text_evidence(name, ev))
    elif cmd == "combine":
        out.append(f"combined V = {_fmt(doc['evidence']['combined']['v'])}")
        if "odds" in doc:
            out.append(f"posterior odds = {_fmt(doc['odds']['posterior'])}; "
                       f"exceeds 1: {_fmt(doc['odds']['exceeds_one'])}")
    elif cmd == "simulate":
        for k, v in doc["inputs"].items():
            out.append(f"  {k} = {v}")
        sm = doc["summary"]
        out.append(f"  empirical error correlation = {_fmt(sm['empirical_error_correlation'])}")
        out.append(f"  error variance = {_fmt(sm['error_variance'])}, MSE = {_fmt(sm['mse'])}")
    elif cmd == "calibrate":
        inp = doc["inputs"]
        out.append(f"reps = {inp['reps']}, seed = {inp['seed']}, rho = {inp['rho']}, "
                   f"sigma2 = {_fmt(inp['sigma2'])}")
        for name, c in doc["calibration"].items():
            out.append(f"  {name}: observed V = {_fmt(c['observed_v'])}, "
                       f"P(V >= {_fmt(c['reference_v'])}) = {_fmt(c['p_exceed'])} "
                       f"+/- {_fmt(c['p_exceed_se'])}, P(V >= 1) = {_fmt(c['p_v_at_least_1'])}")
            out.append("    quantiles: " + ", ".join(f"{q}: {_fmt(v)}" for q, v in c["quantiles"].items()))
    return "\n".join(out)


def _emit(doc, fmt, stream):
    if fmt == "json":
        stream.write(json.dumps(doc, indent=2, allow_nan=False) + "\n")
    else:
        stream.write(render_text(doc) + "\n")


def _combine_inputs(items, model):
    key = "per_group" if model == "per-group" else "pooled"
    values = []
    for item in items:
        p = Path(item)
        if p.suffix == ".json" or p.is_file():
            doc = json.loads(p.read_text(encoding="utf-8"))
            ev = doc.get("evidence", {})
            if key in ev:
                values.append(pipeline.parse_num(ev[key]["v"]))
            elif "combined" in ev:
                values.append(pipeline.parse_num(ev["combined"]["v"]))
            else:
                raise InputError(f"{item}: report has no {key} evidence")
        else:
            try:
                values.append(pipeline.parse_num(item))
            except ValueError as exc:
                raise InputError(f"not a number or report file: {item}") from exc
    return values


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="anova-evidence",
        description="Evidential value for fabrication from published ANOVA cell means.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--format", choices=("text", "json"), default="text")
        sp.add_argument("--output", "-o", type=Path, help="write the report here instead of stdout")

    a = sub.add_parser("analyze", help="evidential value of a study file")
    a.add_argument("study", type=Path)
    a.add_argument("--model", choices=pipeline.MODELS, default="both")
    a.add_argument("--sigma2", type=_positive)
    a.add_argument("--n", type=_positive, help="override observations per cell")
    a.add_argument("--prior-odds", type=_positive)
    common(a)

    s = sub.add_parser("sigma", help="recover sigma^2 from the study's F-statistics")
    s.add_argument("study", type=Path)
    common(s)

    se = sub.add_parser("sensitivity", help="worst case over the rounding intervals")
    se.add_argument("study", type=Path)
    se.add_argument("--sigma2", type=_positive)
    se.add_argument("--worst-sigma2", type=_positive, help="sigma^2 to use for the worst-case table")
    se.add_argument("--n", type=_positive)
    common(se)

    c = sub.add_parser("combine", help="multiply evidential values of independent studies")
    c.add_argument("values", nargs="+", help="numbers or JSON report files")
    c.add_argument("--model", choices=("pooled", "per-group"), default="pooled")
    c.add_argument("--prior-odds", type=_positive)
    common(c)

    sm = sub.add_parser("simulate", help="simulate raw data under the copying model")
    sm.add_argument("--I", dest="I", type=int, required=True)
    sm.add_argument("--n", type=int, required=True)
    sm.add_argument("--rho", type=float, default=0.0)
    sm.add_argument("--sigma", type=_positive, default=1.0)
    sm.add_argument("--mu", type=float, default=0.0)
    sm.add_argument("--seed", type=int, default=0)
    sm.add_argument("--dataset", type=Path, help="write the raw dataset (JSON) here")
    common(sm)

    ca = sub.add_parser("calibrate", help="Monte Carlo distribution of V for a study design")
    ca.add_argument("study", type=Path)
    ca.add_argument("--sigma2", type=_positive)
    ca.add_argument("--reps", type=int, default=1000)
    ca.add_argument("--seed", type=int, default=0)
    ca.add_argument("--rho", type=float, default=0.0)
    ca.add_argument("--v0", type=float, help="reference value for the exceedance probability")
    ca.add_argument("--workers", type=int, default=1)
    common(ca)
    return p


def run(argv=None, stdout=None) -> int:
    stdout = stdout or sys.stdout
    args = build_parser().parse_args(argv)
    try:
        if args.command == "analyze":
            doc = pipeline.analyze(load_study(args.study), args.model, args.sigma2, args.n,
                                   args.prior_odds)
        elif args.command == "sigma":
            doc = pipeline.sigma(load_study(args.study))
        elif args.command == "sensitivity":
            doc = pipeline.sensitivity(load_study(args.study), args.sigma2, args.worst_sigma2, args.n)
        elif args.command == "combine":
            doc = pipeline.combine(_combine_inputs(args.values, args.model), args.prior_odds)
        elif args.command == "simulate":
            doc, dataset = pipeline.simulate(args.I, args.n, args.rho, args.sigma, args.mu, args.seed)
            if args.dataset:
                args.dataset.write_text(json.dumps(dataset) + "\n", encoding="utf-8")
        elif args.command == "calibrate":
            if args.reps < 1:
                raise InputError("--reps must be at least 1")
            doc = pipeline.calibrate(load_study(args.study), args.sigma2, args.reps, args.seed,
                                     args.rho, args.v0, args.workers)
    except UnresolvableError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (InputError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if args.output:
        with open(args.output, "w", encoding="utf-8") as fh:
            _emit(doc, args.format, fh)
    else:
        _emit(doc, args.format, stdout)
    return 0


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
