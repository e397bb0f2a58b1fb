"""Command-line entry point: ``markovproj <subcommand> ...``."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import ConfigError
from .experiment import (
    OUTPUT_ROOT_ENV,
    compare_runs,
    fpke_run,
    hypotheses_run,
    load_testspec,
    run_experiment,
    write_test_rows,
)

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2


def _simulate(args):
    run_dir = run_experiment(args.config, args.output)
    print(run_dir)
    return EXIT_OK


def _compare(args):
    spec = load_testspec(args.testspec)
    report = compare_runs(args.run_a, args.run_b, spec)
    out = Path(args.output) if args.output else Path(args.run_b) / "comparison.csv"
    write_test_rows(out, report.rows)
    for r in report.rows:
        mark = "pass" if r.passed else "FAIL"
        print(f"{mark} {r.test} t={r.time:g} coord={r.coordinate} stat={r.statistic:.6g} p={r.pvalue:.4g}")
    print("verdict:", "pass" if report.passed else "fail")
    return EXIT_OK if report.passed else EXIT_RUNTIME


def _fpke(args):
    reports = fpke_run(args.run, args.functions)
    bad = [r for r in reports if not r.within_budget()]
    for r in reports:
        print(f"{r.mode:9s} {r.label:4s} max|R|={r.max_abs_residual():.3e} "
              f"{'ok' if r.within_budget() else 'OVER BUDGET'}")
    return EXIT_OK if not bad else EXIT_RUNTIME


def _hypotheses(args):
    rep = hypotheses_run(args.run)
    i = rep.integrability
    print(f"integrability: {i.estimate:.6g} +/- {i.stderr:.3g} finite={i.finite}")
    print(f"growth sup over probes: {rep.growth:.6g}")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="markovproj", description=__doc__,
                                epilog=f"Default output root: ${OUTPUT_ROOT_ENV} (else ./runs).")
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("simulate", help="run a configured experiment")
    s.add_argument("config")
    s.add_argument("-o", "--output", help="run directory (overrides the config)")
    s.set_defaults(func=_simulate)
    c = sub.add_parser("compare", help="two-sample tests between two runs")
    c.add_argument("run_a")
    c.add_argument("run_b")
    c.add_argument("testspec")
    c.add_argument("-o", "--output", help="report path (default RUN_B/comparison.csv)")
    c.set_defaults(func=_compare)
    f = sub.add_parser("fpke-residual", help="weak forward-equation residuals for a run")
    f.add_argument("run")
    f.add_argument("-m", "--functions", type=int, default=None)
    f.set_defaults(func=_fpke)
    h = sub.add_parser("hypotheses", help="integrability and growth diagnostics for a run")
    h.add_argument("run")
    h.set_defaults(func=_hypotheses)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
