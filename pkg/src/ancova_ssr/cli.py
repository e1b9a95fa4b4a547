"""Command-line interface: ``ancova-ssr {check,plan,analyze,recalc,simulate}``.

Exit codes: 0 success, 1 parse error, 2 infeasible design, 3 blinding
violation, 4 runtime or search failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import warnings

from . import __version__
from .ancova import fit_ancova, test_superiority
from .design import CompoundSymmetrySpec, DesignSpec, check_feasibility, cs_eigenvalues
from .errors import (
    AncovaSSRError,
    BlindingError,
    DomainError,
    FeasibilityError,
    UndersizedError,
)
from .formats import (
    FIGURE_COLUMNS,
    RESULT_COLUMNS,
    ParseError,
    as_joint,
    load_batch,
    load_covariance,
    read_interim_csv,
    read_trial_csv,
    result_row,
    write_csv,
    write_csv_file,
)
from .recalc import RecalcConfig, run_recalc
from .simulation import figure_data, simulate
from .sizing import size_all

EXIT_OK, EXIT_PARSE, EXIT_INFEASIBLE, EXIT_BLINDING, EXIT_RUNTIME = 0, 1, 2, 3, 4


def _table(pairs, out) -> None:
    width = max(len(str(k)) for k, _ in pairs)
    for key, value in pairs:
        if isinstance(value, float):
            value = f"{value:.6g}"
        out.write(f"{key:<{width}}  {value}\n")


def _design_from_args(args, c: int) -> DesignSpec:
    return DesignSpec(delta=args.delta, gamma=args.gamma, alpha=args.alpha,
                      beta=1.0 - args.power, c=c)


def _nuisance_from_args(args) -> tuple[float, float, int]:
    """Outcome variance, R^2 and c, from --cov or from explicit flags."""
    if args.cov:
        spec = load_covariance(args.cov)
        report = check_feasibility(spec)
        if not report.feasible:
            raise FeasibilityError("; ".join(report.messages))
        jc = as_joint(spec)
        return jc.sigma_y_sq, report.r_squared, jc.c
    if args.sigma_y_sq is None or args.r_squared is None:
        raise ParseError("either --cov or both --sigma-y-sq and --r-squared are required")
    return args.sigma_y_sq, args.r_squared, args.c


def cmd_check(args, out) -> int:
    spec = load_covariance(args.spec)
    report = check_feasibility(spec)
    if args.format == "json":
        json.dump({"eigenvalues": report.eigenvalues.tolist(), "is_psd": report.is_psd,
                   "r_squared": report.r_squared, "feasible": report.feasible,
                   "messages": report.messages}, out, indent=2)
        out.write("\n")
    else:
        pairs = [("eigenvalues", " ".join(f"{v:.6g}" for v in report.eigenvalues)),
                 ("positive semidefinite", "yes" if report.is_psd else "no"),
                 ("R²", "undefined" if report.r_squared is None else report.r_squared)]
        if isinstance(spec, CompoundSymmetrySpec):
            lam1, lam2, mult = cs_eigenvalues(spec)
            pairs.append(("closed-form eigenvalues", f"{lam1:.6g} (x{mult[0]}), {lam2:.6g} (x{mult[1]})"))
        _table(pairs, out)
        for msg in report.messages:
            out.write(f"warning: {msg}\n")
    return EXIT_OK if report.feasible else EXIT_INFEASIBLE


def cmd_plan(args, out) -> int:
    sigma_y_sq, r_sq, c = _nuisance_from_args(args)
    design = _design_from_args(args, c)
    results = size_all(design, sigma_y_sq, r_sq)
    rows = [{"method": r.method, "n_raw": r.n_raw, "n_total": r.n_total, "n1": r.n1, "n2": r.n2}
            for r in results]
    columns = ["method", "n_raw", "n_total", "n1", "n2"]
    if args.format == "csv":
        write_csv(out, columns, rows, "seed=none")
    elif args.format == "json":
        json.dump({"sigma_y_sq": sigma_y_sq, "r_squared": r_sq, "c": c, "methods": rows}, out, indent=2)
        out.write("\n")
    else:
        out.write(f"sigma_y² = {sigma_y_sq:.6g}, R² = {r_sq:.6g}, c = {c}, "
                  f"gamma = {design.r2}:{design.r1}\n")
        out.write(f"{'method':<7}{'n_raw':>12}{'n_total':>9}{'n1':>7}{'n2':>7}\n")
        for r in rows:
            out.write(f"{r['method']:<7}{r['n_raw']:>12.4f}{r['n_total']:>9}{r['n1']:>7}{r['n2']:>7}\n")
    return EXIT_OK


def cmd_analyze(args, out) -> int:
    data = read_trial_csv(args.data)
    fit = fit_ancova(data)
    reject, threshold = test_superiority(fit, args.alpha)
    pairs = [(k, v) for k, v in fit.__dict__.items() if k != "slopes"]
    pairs.append(("slopes", [float(s) for s in fit.slopes]))
    pairs += [("critical_value", threshold), ("reject", reject)]
    if args.format == "json":
        json.dump(dict(pairs), out, indent=2)
        out.write("\n")
    else:
        _table(pairs, out)
    return EXIT_OK


def cmd_recalc(args, out) -> int:
    interim = read_interim_csv(args.data)
    if args.c is not None and args.c != interim.c:
        raise ParseError(f"--c {args.c} does not match the {interim.c} covariate columns in {args.data}")
    if args.cov:
        sigma_y_sq, r_sq, c = _nuisance_from_args(args)
        if c != interim.c:
            raise ParseError(f"{args.cov} has c = {c} but {args.data} has {interim.c} covariates")
    else:
        if args.sigma_y_sq is None or args.r_squared is None:
            raise ParseError("either --cov or both --sigma-y-sq and --r-squared are required")
        sigma_y_sq, r_sq = args.sigma_y_sq, args.r_squared
    cfg = RecalcConfig(_design_from_args(args, interim.c), sigma_y_sq, r_sq,
                       tau=args.tau, k_bound=args.k)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        result = run_recalc(cfg, interim)
    for w in caught:
        sys.stderr.write(f"warning: {w.message}\n")
    if args.format == "json":
        json.dump(result.to_dict(), out, indent=2)
        out.write("\n")
    else:
        _table(result.audit, out)
    return EXIT_OK


def cmd_simulate(args, out) -> int:
    items = load_batch(args.batch)
    rows, figure_rows, seeds = [], [], []
    failed = False
    for i, item in enumerate(items):
        if isinstance(item, Exception):
            rows.append(result_row(i, None, None, str(item)))
            failed = True
            continue
        seeds.append(str(item.seed))
        try:
            result = simulate(item, workers=args.workers)
            rows.append(result_row(i, item, result))
            if args.figure_data:
                figure_rows.append(figure_data(item, result, workers=args.workers,
                                               n_sim_per_eval=args.oracle_n_sim))
        except AncovaSSRError as exc:
            rows.append(result_row(i, item, None, str(exc)))
            failed = True
    meta = "seeds=" + ",".join(seeds)
    if args.output:
        write_csv_file(args.output, RESULT_COLUMNS, rows, meta)
    else:
        write_csv(out, RESULT_COLUMNS, rows, meta)
    if args.figure_data:
        write_csv_file(args.figure_data, FIGURE_COLUMNS, figure_rows, meta)
    return EXIT_RUNTIME if failed else EXIT_OK


def _add_design_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--delta", type=float, required=True,
                   help="clinically relevant adjusted-mean difference")
    p.add_argument("--alpha", type=float, default=0.05, help="two-sided level (default 0.05)")
    p.add_argument("--power", type=float, default=0.8, help="target power 1-beta (default 0.8)")
    p.add_argument("--gamma", default="1:1", help="allocation ratio n2:n1 (default 1:1)")


def _add_nuisance_flags(p: argparse.ArgumentParser, with_c: bool) -> None:
    p.add_argument("--cov", help="covariance specification file (JSON)")
    p.add_argument("--sigma-y-sq", type=float, help="planning outcome variance")
    p.add_argument("--r-squared", type=float, help="planning squared multiple correlation")
    if with_c:
        p.add_argument("--c", type=int, default=0,
                       help="number of covariates when --cov is not given (default 0)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ancova-ssr", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("check", help="feasibility of a covariance specification")
    p.add_argument("spec")
    p.add_argument("--format", choices=("table", "json"), default="table")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("plan", help="fixed-design sizes by the four approximations")
    _add_design_flags(p)
    _add_nuisance_flags(p, with_c=True)
    p.add_argument("--format", choices=("table", "csv", "json"), default="table")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("analyze", help="ANCOVA superiority test on a labelled dataset")
    p.add_argument("data", help="CSV with header group,y,z1,...,zc")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--format", choices=("table", "json"), default="table")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("recalc", help="blinded interim sample-size recalculation")
    p.add_argument("data", help="blinded CSV with header y,z1,...,zc")
    _add_design_flags(p)
    _add_nuisance_flags(p, with_c=False)
    p.add_argument("--c", type=int, help="expected number of covariates (checked against the CSV)")
    p.add_argument("--tau", type=float, default=0.5, help="interim fraction (default 0.5)")
    p.add_argument("--k", type=float, default=4.0, help="bound factor on N_init (default 4)")
    p.add_argument("--format", choices=("table", "json"), default="table")
    p.set_defaults(func=cmd_recalc)

    p = sub.add_parser("simulate", help="run a scenario batch")
    p.add_argument("batch", help="JSON list of scenario records")
    p.add_argument("--output", "-o", help="CSV output path (default stdout)")
    p.add_argument("--workers", type=int, default=1, help="worker threads (default 1)")
    p.add_argument("--figure-data", help="also write (label, recalc power, oracle power, target) CSV")
    p.add_argument("--oracle-n-sim", type=int, default=None,
                   help="runs per oracle evaluation for --figure-data (default: scenario n_sim)")
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None, out=None) -> int:
    out = sys.stdout if out is None else out
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_PARSE if exc.code else EXIT_OK
    try:
        return args.func(args, out)
    except ParseError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_PARSE
    except BlindingError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_BLINDING
    except (FeasibilityError, UndersizedError) as exc:
        sys.stderr.write(f"infeasible: {exc}\n")
        return EXIT_INFEASIBLE
    except DomainError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_PARSE
    except AncovaSSRError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_RUNTIME
