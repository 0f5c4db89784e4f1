"""Command-line entry point: ``svrgkit {run,certify,compare,variance-check,fit-rate}``.

Exit codes: 0 success, 1 a check ran and failed, 2 bad input.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .. import certificates as cert
from ..oracle import NumericError
from .compare import compare, fit_rate
from .config import OUTPUT_ENV, load_spec
from .runner import build_problem, read_run_csv, run_experiment

EXIT_OK, EXIT_FAILED, EXIT_USAGE = 0, 1, 2


def _cmd_run(args) -> int:
    spec = load_spec(args.spec)
    if args.output_dir:
        spec = type(spec)(**dict(spec.__dict__, output_dir=Path(args.output_dir)))
    result = run_experiment(spec, jobs=args.jobs)
    for path in result.files:
        print(path)
    print(result.manifest)
    diverged = [f"{a} (seed {s})" for (a, s), r in result.records.items() if r.status == "diverged"]
    if diverged:
        print("diverged: " + ", ".join(diverged), file=sys.stderr)
    return EXIT_OK


def _cmd_certify(args) -> int:
    n = int(args.n)
    L, alpha, mu = (cert.parse_fraction(v) for v in (args.L, args.alpha, args.mu))
    report = cert.certify(n, L, alpha, int(args.b), mu, cert.parse_fraction(args.nu))
    if args.csv:
        print(",".join(cert.CSV_HEADER))
        print(",".join(str(v) for v in report.csv_row()))
    else:
        print(report.to_text())
    return EXIT_OK if report.valid else EXIT_FAILED


def _cmd_compare(args) -> int:
    table = compare(args.dirs, window=tuple(args.window) if args.window else None)
    out = Path(args.out) if args.out else Path(args.dirs[0]) / "comparison.csv"
    out.write_text(table.to_csv())
    print(table.to_text(), end="")
    print(f"written {out}")
    return EXIT_OK


def _cmd_variance(args) -> int:
    spec = load_spec(args.spec)
    problem = build_problem(spec.problem)
    v = spec.variance
    rng = np.random.default_rng(v.seed)
    print("pair  b   mean_sq        bound          ok")
    failures = 0
    for k in range(v.pairs):
        x = v.scale * rng.normal(size=problem.d)
        xs = v.scale * rng.normal(size=problem.d)
        for b in v.batch_sizes:
            exact = problem.n ** b <= 10 ** 6
            diag = cert.variance_diagnostic(problem, x, xs, b, monte_carlo=not exact, seed=v.seed + k)
            ok = diag.holds
            failures += not ok
            tag = "" if diag.exact else f"  (sampled, stderr {diag.stderr:.2e})"
            print(f"{k:<5d} {b:<3d} {diag.mean_sq:.6e}  {diag.bound:.6e}  {'yes' if ok else 'NO'}{tag}")
    print(f"{failures} violation(s) in {v.pairs * len(v.batch_sizes)} checks")
    return EXIT_FAILED if failures else EXIT_OK


def _cmd_fit_rate(args) -> int:
    cols = read_run_csv(args.csv)
    slope = fit_rate(cols, tuple(args.window) if args.window else None)
    print(f"{slope:.6f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="svrgkit", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run an experiment spec and write CSVs plus a manifest")
    p.add_argument("spec")
    p.add_argument("--output-dir", help=f"override output_dir from the experiment file (default from ${OUTPUT_ENV})")
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("certify", help="check the step-size certificate of an analysed schedule")
    for name in ("n", "L", "alpha", "b", "mu"):
        p.add_argument(name)
    p.add_argument("--nu", default=str(cert.DEFAULT_NU))
    p.add_argument("--csv", action="store_true", help="print a CSV row instead of text")
    p.set_defaults(func=_cmd_certify)

    p = sub.add_parser("compare", help="tabulate runs from one or more result directories")
    p.add_argument("dirs", nargs="+")
    p.add_argument("--out", help="CSV destination (default <first dir>/comparison.csv)")
    p.add_argument("--window", nargs=2, type=float, metavar=("LO", "HI"))
    p.set_defaults(func=_cmd_compare)

    p = sub.add_parser("variance-check", help="check the variance bound on random point pairs")
    p.add_argument("spec")
    p.set_defaults(func=_cmd_variance)

    p = sub.add_parser("fit-rate", help="fitted log-log slope of min-so-far grad_norm_sq")
    p.add_argument("csv")
    p.add_argument("--window", nargs=2, type=float, metavar=("LO", "HI"))
    p.set_defaults(func=_cmd_fit_rate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, ZeroDivisionError, NumericError, OverflowError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
