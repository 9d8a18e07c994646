"""Command-line interface.

Exit codes: 0 success, 1 input or configuration error, 2 fit did not
converge (the report is still written).
"""

from __future__ import annotations

import argparse
import csv
import json
import shlex
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .config import load_config
from .errors import BrmetaError
from .estimation import FitOptions, fit
from .inference import (
    ProfileTarget,
    STATISTIC_KIND,
    chisq_quantile,
    plr_ci,
    profile_statistic,
    wald_ci,
    wald_pvalue,
)
from .io import BUNDLED, bundled_csv_text, load_dataset, read_study_csv
from .model import Method
from .simulation import coverage_study, estimation_study, power_study, pvalue_distribution_study

SCHEMA_VERSION = 1
EXIT_OK, EXIT_INPUT, EXIT_NONCONVERGED = 0, 1, 2


class UsageError(BrmetaError):
    pass


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with the input-error code rather than argparse's 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _pair(text, name, n=2):
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise UsageError(f"{name}: expected {n} comma-separated numbers, got {text!r}") from None
    if len(vals) != n:
        raise UsageError(f"{name}: expected {n} comma-separated numbers, got {text!r}")
    return vals


def _load(args):
    covs = tuple(c.strip() for c in args.covariates.split(",") if c.strip()) if args.covariates else ()
    path = Path(args.data)
    bundled = args.data[:-4] if args.data.endswith(".csv") else args.data
    if not path.exists() and bundled in BUNDLED:
        if covs or args.se_column or args.var_column:
            raise UsageError("column options do not apply to bundled datasets")
        return load_dataset(bundled)
    if not path.exists():
        raise UsageError(f"--data: no such file {args.data!r}")
    return read_study_csv(path, args.se_column, args.var_column, covs)


def _options(args):
    interval = tuple(_pair(args.psi_interval, "--psi-interval")) if args.psi_interval else None
    return FitOptions(
        psi_interval=interval,
        tol_score=args.tol,
        max_iter=args.max_iter,
        psi_start=args.psi_start,
    )


def _invocation(argv, command):
    return {"command": command, "argv": list(argv), "line": "brmeta " + shlex.join(argv), "version": __version__}


def cmd_fit(args, argv, out) -> int:
    data = _load(args)
    method = Method.parse(args.method)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        res = fit(data, method, _options(args))
    names = list(data.names)
    wald = []
    for j, name in enumerate(names):
        ci = wald_ci(res, j, args.level)
        wald.append(
            {
                "coefficient": name,
                "lower": ci.lower,
                "upper": ci.upper,
                "p_value": wald_pvalue(res, j),
            }
        )
    if args.format == "json":
        report = {
            "schema_version": SCHEMA_VERSION,
            "invocation": _invocation(argv, "fit"),
            "data": {"source": args.data, "K": data.K, "p": data.p, "coefficients": names},
            "fit": {**res.as_dict(), "coefficients": names},
            "wald": {"level": args.level, "intervals": wald},
            "warnings": [str(w.message) for w in caught],
        }
        json.dump(report, out, indent=2)
        out.write("\n")
    else:
        out.write(f"# brmeta {__version__} schema_version={SCHEMA_VERSION}\n")
        out.write(f"# invocation: {_invocation(argv, 'fit')['line']}\n")
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["method", "parameter", "estimate", "se", "iterations", "converged", "at_boundary"])
        for j, name in enumerate(names):
            w.writerow([method.value, name, repr(float(res.beta[j])), repr(float(res.se_beta[j])),
                        res.iterations, int(res.converged), int(res.at_boundary)])
        w.writerow([method.value, "psi", repr(float(res.psi)), "", res.iterations,
                    int(res.converged), int(res.at_boundary)])
    for w_ in caught:
        print(f"warning: {w_.message}", file=sys.stderr)
    return EXIT_OK if res.converged else EXIT_NONCONVERGED


def _target(text, data):
    text = text.strip().lower()
    if text == "psi":
        return "psi"
    if text.startswith("beta:"):
        try:
            j = int(text.split(":", 1)[1])
        except ValueError:
            raise UsageError(f"--target: bad coefficient in {text!r}") from None
        if not 1 <= j <= data.p:
            raise UsageError(f"--target: coefficient must be between 1 and {data.p}")
        return j - 1
    raise UsageError("--target: expected 'psi' or 'beta:<j>'")


def cmd_profile(args, argv, out) -> int:
    data = _load(args)
    method = Method.parse(args.method)
    if method is Method.DL:
        raise UsageError("profile statistics need ml, mean-brpl or median-brpl")
    if not args.grid and not args.ci:
        raise UsageError("give --grid and/or --ci")
    opts = _options(args)
    res = fit(data, method, opts)
    which = _target(args.target, data)
    w = csv.writer(out, lineterminator="\n")
    out.write(f"# brmeta {__version__} schema_version={SCHEMA_VERSION}\n")
    out.write(f"# invocation: {_invocation(argv, 'profile')['line']}\n")
    out.write(f"# statistic: {STATISTIC_KIND[method]}\n")
    w.writerow(["kind", "tau", "statistic"])
    est = res.psi if which == "psi" else res.beta[which]
    w.writerow(["estimate", repr(float(est)), "0.0"])
    if args.grid:
        lo, hi, n = _pair(args.grid, "--grid", 3)
        if n < 2 or int(n) != n:
            raise UsageError("--grid: n must be an integer >= 2")
        for tau in np.linspace(lo, hi, int(n)):
            if which == "psi":
                if tau < 0:
                    continue
                target = ProfileTarget.psi(tau)
            else:
                target = ProfileTarget.beta(which, tau)
            stat = profile_statistic(data, method, target, res, opts)
            w.writerow(["profile", repr(float(tau)), repr(stat)])
    if args.ci:
        ci = plr_ci(data, method, which, args.level, fit=res, opts=opts)
        crit = chisq_quantile(args.level, 1)
        w.writerow(["ci_lower", repr(ci.lower), repr(crit)])
        w.writerow(["ci_upper", repr(ci.upper), repr(crit)])
    return EXIT_OK if res.converged else EXIT_NONCONVERGED


def cmd_simulate(args, argv, out) -> int:
    cfg = load_config(args.design, reps=args.reps, seed=args.seed)
    d = cfg.design
    if cfg.study == "brockwell-estimation":
        metrics = estimation_study(d, workers=args.workers)
    elif cfg.study == "brockwell-coverage":
        metrics = coverage_study(d, workers=args.workers)
    elif cfg.study == "brockwell-power":
        metrics = power_study(d, cfg.deltas, cfg.calibration, workers=args.workers)
    else:
        metrics = pvalue_distribution_study(d, workers=args.workers)
    head = [
        f"# brmeta {__version__} schema_version={SCHEMA_VERSION}",
        f"# invocation: {_invocation(argv, 'simulate')['line']}",
        f"# study: {cfg.study} seed={d.seed} reps={d.reps}",
    ]
    if cfg.study == "bootstrap":
        th = d.theta0
        head.append(f"# theta0: beta={[float(b) for b in th.beta]} psi={th.psi!r} test_coefficient={d.test_index + 1}")
    for k, v in sorted(metrics.notes.items()):
        head.append(f"# {k}: {v}")
    text = "\n".join(head) + "\n" + metrics.to_csv()
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        out.write(text)
    return EXIT_OK


def cmd_data(args, argv, out) -> int:
    out.write(bundled_csv_text(args.name))
    return EXIT_OK


def _data_args(p):
    p.add_argument("--data", required=True, help="study CSV, or a bundled dataset name (cocoa, meat)")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--se-column", metavar="NAME", help="column holding standard errors")
    g.add_argument("--var-column", metavar="NAME", help="column holding variances")
    p.add_argument("--covariates", metavar="A,B", help="covariate columns (an intercept is always added)")
    p.add_argument("--method", default="median-brpl", help="ml | mean-brpl | median-brpl | dl")
    p.add_argument("--psi-interval", metavar="LO,HI", help="psi search interval")
    p.add_argument("--psi-start", type=float, help="starting psi (default: DerSimonian-Laird)")
    p.add_argument("--tol", type=float, default=1e-6, help="score tolerance")
    p.add_argument("--max-iter", type=int, default=1000)
    p.add_argument("--level", type=float, default=0.95)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="brmeta", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"brmeta {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fit", help="fit a random-effects meta-analysis or meta-regression")
    _data_args(p)
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("profile", help="profile ratio statistic and confidence interval")
    _data_args(p)
    p.add_argument("--target", default="beta:1", help="psi or beta:<j> (1-based)")
    p.add_argument("--grid", metavar="LO,HI,N", help="evaluate the statistic on a grid")
    p.add_argument("--ci", action="store_true", help="solve for the interval endpoints")
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("simulate", help="run a Monte Carlo study from a TOML design")
    p.add_argument("--design", required=True, help="TOML config file")
    p.add_argument("--reps", type=int, help="override the number of replicates")
    p.add_argument("--seed", type=int, help="override the master seed")
    p.add_argument("--workers", type=int, default=1, help="worker processes")
    p.add_argument("--out", help="output CSV (default: stdout)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("data", help="print a bundled dataset as CSV")
    p.add_argument("name", choices=sorted(BUNDLED))
    p.set_defaults(func=cmd_data)
    return parser


def main(argv=None, out=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    out = out or sys.stdout
    args = build_parser().parse_args(argv)
    try:
        return args.func(args, argv, out)
    except (BrmetaError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
