"""Command-line front door.

Subcommands: create-carry, fit, fit-kron, fit-sp, compare, simulate.  Each
writes a canonical JSON report (sorted keys, two-space indent) plus any CSV
or plot artifacts under ``--out`` and prints a human-readable summary.

Exit codes: 0 success, 2 usage error, 3 data validation error, 4 numerical
failure (including non-convergence under ``--strict``).
"""

import argparse
import datetime
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .correlation import STRUCTURES
from .design import CarrySet, create_carry, load_design
from .errors import (CrossfitError, DataValidationError, NumericalError,
                     SpecificationError)
from .family import FAMILIES, LINKS
from .gee import FitControl, fit_gee, wald_table
from .kron import fit_gee_kron
from .selection import compare, compute_criteria
from .semiparam import fit_gee_sp
from .simulate import scenario_from_dict, write_scenario_outputs

__all__ = ["main"]

_STARS = ((0.001, "***"), (0.01, "**"), (0.05, "*"), (0.1, "."))


def _stars(p: float) -> str:
    for cut, mark in _STARS:
        if p < cut:
            return mark
    return ""


def _fmt_p(p: float) -> str:
    return "< 2e-16" if p < 2e-16 else f"{p:.5f}"


def _dump_json(obj, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _print_summary(fit, criteria) -> None:
    rows = wald_table(fit)
    width = max(len(r["name"]) for r in rows)
    print("Coefficients:")
    print(f"{'':{width}}   Estimate    Std.err      Wald  Pr(>|W|)")
    for r in rows:
        print(f"{r['name']:{width}} {r['estimate']:10.5f} {r['robust_se']:10.5f} "
              f"{r['wald']:9.2f}  {_fmt_p(r['p']):>8} {_stars(r['p'])}")
    print("---")
    print("Signif. codes:  0 '***' 0.001 '**' 0.01 '*' 0.05 '.' 0.1 ' ' 1")
    print()
    print(f"Correlation structure = {fit.correlation_structure}")
    print(f"Estimated scale parameter: {fit.dispersion:.4g}")
    if isinstance(fit.alpha, float):
        print(f"Estimated correlation parameter: alpha {fit.alpha:.3f}")
    print(f"Number of clusters: {fit.n_clusters}   "
          f"Maximum cluster size: {fit.max_cluster_size}")
    if criteria is not None:
        c = criteria.as_dict()
        parts = []
        for k in ("qic", "qicu", "quasi_lik", "cic", "params", "qicc"):
            label = "QuasiLik" if k == "quasi_lik" else k.upper()
            value = f"{c[k]:d}" if k == "params" else f"{c[k]:.2f}"
            parts.append(f"{label} {value}")
        print("Criteria: " + "  ".join(parts))


def _alpha_json(alpha):
    if alpha is None:
        return None
    if isinstance(alpha, np.ndarray):
        return [[float(v) for v in row] for row in alpha]
    return float(alpha)


def _resolve_seed(args) -> object:
    env = os.environ.get("CROSSFIT_SEED")
    if env is not None:
        return int(env)
    return getattr(args, "seed", None)


def _load_frame(args):
    covar = [c.strip() for c in args.covar.split(",") if c.strip()] \
        if getattr(args, "covar", None) else []
    schema = {
        "unit": args.id, "period": args.period, "treatment": args.treatment,
        "response": args.response, "covariates": covar,
    }
    if getattr(args, "time", None):
        schema["time"] = args.time
    frame = load_design(args.data, schema)
    return frame, covar


def _apply_carry(frame, carry_arg: str):
    """Resolve the --carry flag into a CarrySet or the bare frame."""
    if carry_arg == "none":
        return frame
    if carry_arg == "auto":
        return create_carry(frame, mode="simple")
    if carry_arg == "auto-complex":
        return create_carry(frame, mode="complex")
    names = tuple(c.strip() for c in carry_arg.split(",") if c.strip())
    missing = [c for c in names if c not in frame.data.columns]
    if missing:
        raise DataValidationError(f"carry columns not in data: {missing}")
    for c in names:
        vals = set(np.unique(frame.data[c].to_numpy()))
        if not vals <= {0, 1}:
            raise DataValidationError(f"carry column {c} is not 0/1 valued")
    mode = "complex" if any("_over_" in c for c in names) else "simple"
    return CarrySet(frame=frame, carry_names=names, mode=mode)


def _parse_formula(formula: str, response: str):
    if "~" not in formula:
        raise SpecificationError("formula must look like 'response ~ a + b'")
    lhs, rhs = formula.split("~", 1)
    if lhs.strip() != response:
        raise SpecificationError(
            f"formula response {lhs.strip()!r} does not match --response {response!r}")
    return [t.strip() for t in rhs.split("+") if t.strip()]


def _metadata(args, seed) -> dict:
    return {
        "dataset": str(getattr(args, "data", "")) or None,
        "subcommand": args.command,
        "timestamp": (datetime.datetime.now().isoformat(timespec="seconds")
                      if getattr(args, "stamp", False) else None),
        "seed": seed,
    }


def _base_report(args, fit, criteria, terms_used) -> dict:
    return {
        "metadata": _metadata(args, _resolve_seed(args)),
        "model": {
            "family": args.family,
            "link": args.link,
            "correlation": getattr(args, "correlation",
                                   getattr(args, "within_correlation", None)),
            "terms": terms_used,
            "formula": getattr(args, "formula", None),
        },
        "coefficients": wald_table(fit),
        "dispersion": float(fit.dispersion),
        "alpha": _alpha_json(fit.alpha),
        "correlation_structure": fit.correlation_structure,
        "n_clusters": fit.n_clusters,
        "max_cluster_size": fit.max_cluster_size,
        "converged": bool(fit.converged),
        "criteria": criteria.as_dict() if criteria is not None else None,
    }


def _check_strict(args, converged: bool) -> None:
    if getattr(args, "strict", False) and not converged:
        raise NumericalError("fit did not converge (strict mode)")


def _terms_echo(args, data, covar, with_time=False):
    """The default term list a fit resolves to, for the report echo."""
    carry = list(data.carry_names) if isinstance(data, CarrySet) else []
    time_col = [args.time] if with_time and getattr(args, "time", None) else []
    terms = ([args.period, args.treatment] + carry + time_col
             + [c for c in covar if c not in time_col])
    return terms


def cmd_create_carry(args) -> int:
    frame, _ = _load_frame(args)
    carries = create_carry(frame, mode="complex" if args.complex else "simple")
    for name in carries.carry_names:
        print(f"added carry column: {name}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    carries.data.to_csv(out / "augmented.csv", index=False)
    print(f"augmented table written to {out / 'augmented.csv'}")
    return 0


def cmd_fit(args) -> int:
    frame, covar = _load_frame(args)
    data = _apply_carry(frame, args.carry)
    terms = _parse_formula(args.formula, args.response) if args.formula else None
    control = FitControl(tol=args.tol, max_iter=args.max_iter)
    fit = fit_gee(data, family=args.family, link=args.link,
                  correlation=args.correlation, covariates=covar,
                  terms=terms, control=control)
    _check_strict(args, fit.converged)
    criteria = None if fit.degenerate else compute_criteria(fit)
    _print_summary(fit, criteria)
    report = _base_report(args, fit, criteria,
                          terms if terms else _terms_echo(args, data, covar))
    _dump_json(report, Path(args.out) / "report.json")
    return 0


def cmd_fit_kron(args) -> int:
    frame, covar = _load_frame(args)
    data = _apply_carry(frame, args.carry)
    terms = _parse_formula(args.formula, args.response) if args.formula else None
    control = FitControl(tol=args.tol, max_iter=args.max_iter)
    kfit = fit_gee_kron(data, family=args.family, link=args.link,
                        within=args.within_correlation, covariates=covar,
                        terms=terms, control=control)
    _check_strict(args, kfit.converged)
    criteria = None if kfit.base.degenerate else compute_criteria(kfit.base)
    _print_summary(kfit.base, criteria)
    print("Within-period correlation (rounded):")
    print(np.array_str(np.round(kfit.within, 3)))
    print("Between-period correlation:")
    print(np.array_str(np.round(kfit.between, 4)))
    report = _base_report(args, kfit.base, criteria,
                          terms if terms else _terms_echo(args, data, covar,
                                                          with_time=True))
    report["within"] = [[float(v) for v in row] for row in kfit.within]
    report["between"] = [[float(v) for v in row] for row in kfit.between]
    report["scaling_alpha"] = (None if kfit.scaling_alpha is None
                               else float(kfit.scaling_alpha))
    report["n_outer_iterations"] = kfit.n_outer_iterations
    _dump_json(report, Path(args.out) / "report.json")
    return 0


def cmd_fit_sp(args) -> int:
    frame, covar = _load_frame(args)
    data = _apply_carry(frame, args.carry)
    nodes = None if args.nodes in (None, "auto") else int(args.nodes)
    control = FitControl(tol=args.tol, max_iter=args.max_iter)
    spfit = fit_gee_sp(data, family=args.family, link=args.link,
                       correlation=args.correlation, covariates=covar,
                       nodes=nodes, control=control)
    _check_strict(args, spfit.fit.converged)
    _print_summary(spfit.fit, spfit.criteria)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    curve_paths = []
    for i, curve in enumerate(spfit.curves):
        safe = curve.label.replace("/", "_").replace(" ", "_")
        path = out / f"curve_{i:02d}_{safe}.csv"
        with open(path, "w") as fh:
            fh.write("effect,time,estimate,se,lower,upper\n")
            for k in range(curve.grid.size):
                fh.write(f"{curve.label},{curve.grid[k]!r},{curve.estimate[k]!r},"
                         f"{curve.se[k]!r},{curve.lower[k]!r},{curve.upper[k]!r}\n")
        curve_paths.append(str(path))
    if args.plot:
        curve_paths += _plot_curves(spfit, Path(args.plot))
    report = _base_report(args, spfit.fit, spfit.criteria,
                          spfit.parametric_names)
    report["curves"] = curve_paths
    report["nodes"] = int(spfit.basis.interior_knots.size)
    report["parametric_params"] = spfit.n_parametric
    _dump_json(report, out / "report.json")
    return 0


def _plot_curves(spfit, plot_dir: Path) -> list:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plot_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, curve in enumerate(spfit.curves):
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.plot(curve.grid, curve.estimate, color="C0")
        ax.fill_between(curve.grid, curve.lower, curve.upper,
                        color="C0", alpha=0.25, linewidth=0)
        ax.axhline(0.0, color="grey", linewidth=0.8, linestyle=":")
        ax.set_xlabel("time")
        ax.set_ylabel("effect")
        ax.set_title(curve.label)
        safe = curve.label.replace("/", "_").replace(" ", "_")
        path = plot_dir / f"curve_{i:02d}_{safe}.svg"
        fig.savefig(path)
        plt.close(fig)
        paths.append(str(path))
    return paths


def _default_label(path: Path) -> str:
    # qualify generic report names by their directory so labels stay distinct
    if path.stem in ("report", "ranking"):
        return f"{path.parent.name or '.'}/{path.stem}"
    return path.stem


def cmd_compare(args) -> int:
    records, labels = [], []
    for path in args.reports:
        with open(path) as fh:
            report = json.load(fh)
        if report.get("criteria") is None:
            raise DataValidationError(f"report {path} carries no criteria")
        records.append(report["criteria"])
        labels.append(_default_label(Path(path)))
    if args.labels is not None:
        labels = [s.strip() for s in args.labels.split(",")]
    ranked = compare(records, labels, criterion=args.criterion)
    print(f"rank  {'label':20} {args.criterion.upper():>12}  params")
    rows = []
    for i, (label, rec) in enumerate(ranked, start=1):
        value = getattr(rec, args.criterion)
        print(f"{i:>4}  {label:20} {value:12.2f}  {rec.params:>6}")
        rows.append({"rank": i, "label": label, "criteria": rec.as_dict()})
    if args.out:
        _dump_json({"criterion": args.criterion, "ranking": rows},
                   Path(args.out) / "ranking.json")
    return 0


def cmd_simulate(args) -> int:
    with open(args.config) as fh:
        cfg = json.load(fh)
    scenario = scenario_from_dict(cfg)
    seed = _resolve_seed(args)
    csv_path, truth_path = write_scenario_outputs(scenario, args.out, seed=seed)
    print(f"dataset written to {csv_path}")
    print(f"ground truth written to {truth_path}")
    return 0


def _add_common_data_flags(p, need_response=True):
    p.add_argument("--data", required=True, help="input CSV file")
    p.add_argument("--id", required=True, help="experimental-unit column")
    p.add_argument("--period", required=True, help="period column")
    p.add_argument("--treatment", required=True, help="treatment column")
    if need_response:
        p.add_argument("--response", required=True, help="response column")
    p.add_argument("--time", default=None, help="measurement-time column")
    p.add_argument("--out", default="crossfit-out", help="output directory")
    p.add_argument("--stamp", action="store_true",
                   help="include a wall-clock timestamp in the report "
                        "(breaks byte-for-byte determinism)")


def _add_model_flags(p):
    p.add_argument("--carry", default="auto",
                   help="auto | auto-complex | none | comma-separated column names")
    p.add_argument("--covar", default=None, help="comma-separated covariates")
    p.add_argument("--family", default="gaussian", choices=list(FAMILIES))
    p.add_argument("--link", default=None, choices=sorted(LINKS))
    p.add_argument("--formula", default=None,
                   help="override: 'response ~ term + term'")
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--max-iter", type=int, default=25, dest="max_iter")
    p.add_argument("--strict", action="store_true",
                   help="exit 4 when the fit does not converge")
    p.add_argument("--seed", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crossfit",
        description="GEE analysis of crossover designs with carry-over effects")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("create-carry",
                       help="add carry-over indicator columns to a CSV")
    _add_common_data_flags(p, need_response=False)
    p.add_argument("--response", required=False, default=None)
    p.add_argument("--complex", action="store_true",
                   help="ordered-pair (complex) carry-over indicators")
    p.set_defaults(handler=cmd_create_carry)

    p = sub.add_parser("fit", help="fit the crossover GEE model")
    _add_common_data_flags(p)
    _add_model_flags(p)
    p.add_argument("--correlation", default="exchangeable",
                   choices=list(STRUCTURES[:4]))
    p.set_defaults(handler=cmd_fit)

    p = sub.add_parser("fit-kron",
                       help="fit with between-period x within-period correlation")
    _add_common_data_flags(p)
    _add_model_flags(p)
    p.add_argument("--within-correlation", default="ar1",
                   dest="within_correlation", choices=list(STRUCTURES[:4]))
    p.set_defaults(handler=cmd_fit_kron, tol=1e-5)

    p = sub.add_parser("fit-sp",
                       help="fit smooth time and carry-over effect curves")
    _add_common_data_flags(p)
    _add_model_flags(p)
    p.add_argument("--correlation", default="exchangeable",
                   choices=list(STRUCTURES[:4]))
    p.add_argument("--nodes", default="auto",
                   help="interior knots (integer or 'auto')")
    p.add_argument("--plot", default=None,
                   help="directory for one vector plot per curve")
    p.set_defaults(handler=cmd_fit_sp)

    p = sub.add_parser("compare", help="rank fitted models by a criterion")
    p.add_argument("reports", nargs="+", help="two or more fit report JSONs")
    p.add_argument("--criterion", default="qic",
                   choices=["qic", "qicu", "cic", "qicc"])
    p.add_argument("--labels", default=None, help="comma-separated labels")
    p.add_argument("--out", default=None)
    p.set_defaults(handler=cmd_compare)

    p = sub.add_parser("simulate", help="generate a scenario dataset")
    p.add_argument("--config", required=True, help="scenario JSON file")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default="crossfit-out")
    p.set_defaults(handler=cmd_simulate)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except (DataValidationError, SpecificationError) as err:
        print(f"data error: {err}", file=sys.stderr)
        return 3
    except NumericalError as err:
        print(f"numerical error: {err}", file=sys.stderr)
        return 4
    except CrossfitError as err:
        print(f"error: {err}", file=sys.stderr)
        return 3
    except FileNotFoundError as err:
        print(f"data error: {err}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
