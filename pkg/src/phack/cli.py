"""Command-line interface: ``phack {test,simulate,bounds,critvals,summarize}``.

Reports are JSON with sorted keys and floats rounded to 12 significant
digits, so identical inputs, flags and seeds give byte-identical output.
Each report embeds the library version and the resolved configuration.
Exit status is 0 on success (whatever the tests decide) and 2 on input
errors.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bounds import bin_bound_table, bound_density
from .constraints import BinningScheme
from .effects import HalfNormal
from .ingest import IngestError, RecordSchema, read_csv, summarize
from .lcm import DEFAULT_TABLE, _cache_path, brownian_bridge_sup_draws, load_or_create_table
from .nullmodel import PCurveSpec, TestFamily, figure1_curves, pcurve_density
from .simulate import hacked_pcurve, rates_to_csv, run_mc_study, study_from_dict
from .stattests import ALL_TESTS, BatteryConfig, prepare_sample, run_battery

log = logging.getLogger("phack")

EXIT_OK = 0
EXIT_INPUT = 2
SIG_DIGITS = 12
CURVE_M = (2, 5, 10)


class InputError(Exception):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


def _clean(obj):
    """Round floats to ``SIG_DIGITS`` significant digits; non-finite floats become strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not math.isfinite(x):
            return str(x)
        return float(f"{x:.{SIG_DIGITS}g}")
    return obj


def dumps(obj) -> str:
    return json.dumps(_clean(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def _fmt(x) -> str:
    return f"{float(x):.{SIG_DIGITS}g}"


def _emit(text: str, output) -> None:
    if output is None or str(output) == "-":
        sys.stdout.write(text)
    else:
        Path(output).write_text(text, encoding="utf-8")


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _schema(args) -> RecordSchema:
    return RecordSchema(
        p=args.p_column,
        t=args.t_column,
        cluster_id=args.cluster_column,
        rounding_digits=args.rounding_column,
    )


def _read(args):
    try:
        return read_csv(args.input, _schema(args))
    except IngestError as exc:
        raise InputError(str(exc), exc.report) from exc


def _tests_arg(text):
    names = tuple(t.strip() for t in text.split(",") if t.strip())
    unknown = sorted(set(names) - set(ALL_TESTS))
    if unknown or not names:
        raise argparse.ArgumentTypeError(f"unknown tests {unknown}; choose from {','.join(ALL_TESTS)}")
    return names


def _add_columns(p):
    p.add_argument("input", help="CSV file with a header row")
    p.add_argument("--p-column", default="p", help="column of reported p-values (default: p)")
    p.add_argument("--t-column", default=None, help="column of t statistics, used where p is missing")
    p.add_argument("--cluster-column", default=None, help="column of cluster labels (e.g. paper id)")
    p.add_argument("--rounding-column", default=None, help="column with the number of reported decimals")


# ---------------------------------------------------------------------------
# subcommands


def cmd_test(args) -> int:
    ingest = _read(args)
    J = args.bins if args.bins is not None else (15 if args.cluster_subsample else 30)
    try:
        config = BatteryConfig(
            alpha=args.alpha,
            J=J,
            K=args.K,
            family=args.family,
            tests=args.tests,
            deround=args.deround,
            cluster_subsample=args.cluster_subsample,
            cluster_robust=args.cluster_robust,
            ridge=args.ridge,
            variance=args.variance,
            fisher_alpha=args.fisher_alpha,
            threshold=args.threshold,
            seed=args.seed,
        )
        sample = prepare_sample(ingest.sample, config)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    table = None
    table_cfg = {"m": args.table_m, "R": args.table_R, "seed": args.table_seed}
    if "lcm" in config.tests:
        table, generated = load_or_create_table(**table_cfg)
        if generated:
            log.warning("generated LCM quantile table %s", table.table_id)
    resolved = {**config.to_dict(), "lcm_table": table_cfg, "input": str(args.input), "columns": _schema(args).to_dict()}
    log.info("resolved config: %s", json.dumps(resolved, sort_keys=True))
    results, errors = run_battery(sample, config, lcm_table=table, prepared=True)
    report = {
        "version": __version__,
        "command": "test",
        "config": resolved,
        "ingest": ingest.report(),
        "summary": summarize(ingest.sample),
        "n_analysed": sample.n,
        "results": [r.to_dict() for r in results],
        "errors": errors,
    }
    _emit(dumps(report), args.output)
    return EXIT_OK


def cmd_summarize(args) -> int:
    ingest = _read(args)
    report = {
        "version": __version__,
        "command": "summarize",
        "config": {"input": str(args.input), "columns": _schema(args).to_dict()},
        "ingest": ingest.report(),
        "summary": summarize(ingest.sample),
    }
    _emit(dumps(report), args.output)
    return EXIT_OK


def cmd_simulate(args) -> int:
    try:
        cfg = json.loads(Path(args.config).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read study config {args.config}: {exc}") from exc
    if args.n_jobs is not None:
        cfg["n_jobs"] = args.n_jobs
    try:
        study = study_from_dict(cfg)
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"invalid study config: {exc}") from exc
    echo = {"version": __version__, "command": "simulate", "config": study.to_dict()}
    log.info("resolved config: %s", json.dumps(_clean(echo["config"]), sort_keys=True))
    rows = run_mc_study(study)
    _emit(rates_to_csv(rows), args.output)
    if args.output is not None and str(args.output) != "-":
        Path(str(args.output) + ".config.json").write_text(dumps(echo), encoding="utf-8")
    else:
        sys.stderr.write(dumps(echo))
    return EXIT_OK


def _bounds_table(args):
    binning = BinningScheme(args.bins, args.alpha)
    edges = binning.edges
    rows = []
    for k in range(args.K + 1):
        tab = bin_bound_table(args.family, binning, k)
        for j, v in enumerate(tab.values, start=1):
            rows.append([k, j, _fmt(edges[j - 1]), _fmt(edges[j]), _fmt(v)])
    return _csv_text(["k", "j", "lower_edge", "upper_edge", "theta"], rows)


def _curve_grid(points):
    return np.arange(1, points + 1) / (points + 1)


def _bounds_curves(args):
    p = _curve_grid(args.points)
    spec = PCurveSpec(args.family, HalfNormal(args.sigma))
    cols = [p, pcurve_density(spec, p), bound_density(spec.family, p)]
    cols += [hacked_pcurve(spec, M, p) for M in CURVE_M]
    header = ["p", "density", "bound"] + [f"hacked_density_M{M}" for M in CURVE_M]
    return _csv_text(header, [[_fmt(c[i]) for c in cols] for i in range(p.size)])


def _figure1(args):
    p = _curve_grid(args.points)
    curves = figure1_curves(p)
    header = ["p"] + [f"density_mu{mu:g}" for mu in curves]
    rows = [[_fmt(p[i])] + [_fmt(curves[mu][i]) for mu in curves] for i in range(p.size)]
    return _csv_text(header, rows)


def cmd_bounds(args) -> int:
    try:
        if args.figure1:
            text = _figure1(args)
        elif args.curves:
            text = _bounds_curves(args)
        else:
            text = _bounds_table(args)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    _emit(text, args.output)
    return EXIT_OK


def cmd_critvals(args) -> int:
    try:
        table = brownian_bridge_sup_draws(args.m, args.R, args.seed)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    path = table.save(args.output if args.output is not None else _cache_path(args.m, args.R, args.seed))
    report = {
        "version": __version__,
        "command": "critvals",
        "config": {"m": args.m, "R": args.R, "seed": args.seed},
        "table": table.table_id,
        "quantiles": {f"{lv:g}": q for lv, q in table.quantiles.items()},
    }
    log.info("saved %s", path)
    sys.stdout.write(dumps(report))
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="phack", description="Tests for p-hacking based on p-curves.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log the resolved config to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("test", help="run the test battery on a CSV of p-values")
    _add_columns(p)
    p.add_argument("--alpha", type=float, default=0.15, help="analyse p-values in (0, alpha] (default 0.15)")
    p.add_argument("--bins", "-J", type=int, default=None, help="bins for CS1/CS2B (default 30, 15 with subsampling)")
    p.add_argument("--K", type=int, default=2, help="highest difference order for CS2B (default 2)")
    p.add_argument("--family", default="two_sided_t", choices=[f.value for f in TestFamily])
    p.add_argument("--tests", type=_tests_arg, default=ALL_TESTS, help="comma-separated subset of " + ",".join(ALL_TESTS))
    p.add_argument("--deround", action="store_true", help="spread rounded p-values over their rounding interval")
    p.add_argument("--cluster-subsample", action="store_true", help="keep one random p-value per cluster")
    p.add_argument("--cluster-robust", action="store_true", help="cluster-robust covariance for CS1/CS2B")
    p.add_argument("--ridge", action="store_true", help="regularise a singular plug-in covariance")
    p.add_argument("--variance", choices=["restricted", "plugin"], default="restricted")
    p.add_argument("--fisher-alpha", type=float, default=0.05)
    p.add_argument("--threshold", type=float, default=0.05, help="discontinuity location")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--table-m", type=int, default=DEFAULT_TABLE["m"])
    p.add_argument("--table-R", type=int, default=DEFAULT_TABLE["R"])
    p.add_argument("--table-seed", type=int, default=DEFAULT_TABLE["seed"])
    p.add_argument("--output", "-o", default=None)
    p.set_defaults(func=cmd_test)

    p = sub.add_parser("summarize", help="counts describing a CSV of p-values")
    _add_columns(p)
    p.add_argument("--output", "-o", default=None)
    p.set_defaults(func=cmd_summarize)

    p = sub.add_parser("simulate", help="Monte Carlo size/power study from a JSON config")
    p.add_argument("config")
    p.add_argument("--n-jobs", type=int, default=None)
    p.add_argument("--output", "-o", default=None, help="CSV of rejection rates (config echo goes next to it)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("bounds", help="bin bound table, or curve data with --curves / --figure1")
    p.add_argument("--family", default="one_sided_t", choices=[f.value for f in TestFamily])
    p.add_argument("--alpha", type=float, default=0.15)
    p.add_argument("--bins", "-J", type=int, default=15)
    p.add_argument("--K", type=int, default=2)
    p.add_argument("--curves", action="store_true", help="p-curve, bound and specification-search curves")
    p.add_argument("--figure1", action="store_true", help="non-similar one-sided p-curves for mu = 0, -2.5")
    p.add_argument("--sigma", type=float, default=1.0, help="half-normal effect scale for --curves")
    p.add_argument("--points", type=int, default=199, help="grid points in (0, 1) for curves")
    p.add_argument("--output", "-o", default=None)
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("critvals", help="simulate and store the LCM reference table")
    p.add_argument("--m", type=int, default=DEFAULT_TABLE["m"])
    p.add_argument("--R", type=int, default=DEFAULT_TABLE["R"])
    p.add_argument("--seed", type=int, default=DEFAULT_TABLE["seed"])
    p.add_argument("--output", "-o", default=None, help="npz path (default: the table cache)")
    p.set_defaults(func=cmd_critvals)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except InputError as exc:
        sys.stderr.write(dumps({"error": str(exc), "report": exc.report}))
        return EXIT_INPUT
