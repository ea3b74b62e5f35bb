"""Command-line front end: ``fit``, ``predict``, ``simulate`` and ``degree-scan``.

Exit status is 0 on success, 2 when output was written but the fit did not
converge (or some replications failed), and 1 on errors.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from .data import DataError, parse_csv
from .inference import predict_density, predict_survival
from .optimizer import FitConfig, FitError, FitResult, mable_aft
from .simulation import Scheme, SimDesign, format_table, run_design

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NOT_CONVERGED = 2


class CliError(Exception):
    pass


def _float_list(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise CliError(f"cannot parse {text!r} as comma-separated numbers") from None


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return v


def _add_fit_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("input", help="CSV with columns y1, y2, optional delta and covariates")
    p.add_argument("--covariates", help="comma-separated covariate columns (default: all other columns)")
    p.add_argument("--tau", type=float, help="truncation time; must exceed every finite endpoint")
    p.add_argument("--degree-min", type=int, default=3)
    p.add_argument("--degree-max", type=int, default=25)
    p.add_argument("--gamma-init", help="comma-separated starting coefficients")
    p.add_argument("--baseline",
                   help="'zero', 'auto' or comma-separated covariate values used as the baseline "
                        "(default: 'auto' when --tau is absent and some subject is right censored)")
    p.add_argument("--covariance", choices=("observed", "scaled"), default="observed")
    p.add_argument("--warm-start", action="store_true", help="warm-start each weight stage")
    p.add_argument("--threads", type=_positive_int, default=None,
                   help="worker processes over degrees (default: available CPUs)")
    p.add_argument("-o", "--output", help="output path (default: standard output)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bernstein-aft", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="fit the model and write a JSON result")
    _add_fit_options(fit)
    fit.add_argument("--format", choices=("json", "table"), default="json")

    scan = sub.add_parser("degree-scan", help="loglikelihood and change-point statistic per degree")
    _add_fit_options(scan)
    scan.add_argument("--format", choices=("table", "json", "csv"), default="table")

    pred = sub.add_parser("predict", help="density and survival curves from a saved fit")
    pred.add_argument("fit", help="JSON written by 'fit'")
    pred.add_argument("--at", default="all-zeros",
                      help="covariate values: 'all-zeros', 'v1,v2,...' or 'name=v,...'")
    pred.add_argument("--times", required=True, help="'start:stop:count' or comma-separated times")
    pred.add_argument("-o", "--output", help="output CSV (default: standard output)")

    sim = sub.add_parser("simulate", help="Monte Carlo study of the Weibull AFT design")
    sim.add_argument("--scheme", default="case0",
                     help="case0, case1, case2, case5, right30 or right70")
    sim.add_argument("--n", type=int, default=100)
    sim.add_argument("--reps", type=_positive_int, default=1000)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--inspect-len", type=float, help="mean inspection gap for caseK schemes")
    sim.add_argument("--cen-prob", type=float, help="probability of interval reporting for caseK")
    sim.add_argument("--degree-min", type=int, default=3)
    sim.add_argument("--degree-max", type=int, default=25)
    sim.add_argument("--compare", choices=("parametric",), help="add Weibull maximum likelihood columns")
    sim.add_argument("--threads", type=_positive_int, default=None,
                     help="worker processes over replications (default: available CPUs)")
    sim.add_argument("--format", choices=("table", "json"), default="table")
    sim.add_argument("-o", "--output", help="output path (default: standard output)")
    return parser


def _threads(args) -> int:
    return args.threads if args.threads is not None else (os.cpu_count() or 1)


def _emit(text: str, path: str | None) -> None:
    if path:
        Path(path).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _fit_config(args) -> FitConfig:
    baseline: object
    if args.baseline is None or args.baseline in ("zero", "auto"):
        baseline = args.baseline
    else:
        baseline = _float_list(args.baseline)
    try:
        return FitConfig(
            degree_min=args.degree_min,
            degree_max=args.degree_max,
            gamma_init=_float_list(args.gamma_init) if args.gamma_init else None,
            tau=args.tau,
            covariance=args.covariance,
            baseline=baseline,
            warm_start=args.warm_start,
            workers=_threads(args),
        )
    except ValueError as exc:
        raise CliError(str(exc)) from None


def _run_fit(args) -> FitResult:
    cols = [c.strip() for c in args.covariates.split(",") if c.strip()] if args.covariates else None
    data = parse_csv(args.input, cols)
    cfg = _fit_config(args)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        fit = mable_aft(data, cfg)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    return fit


def _fit_table(fit: FitResult) -> str:
    se = np.sqrt(np.abs(np.diag(fit.sigma_gamma))) if fit.gamma.size else np.zeros(0)
    names = fit.covariate_names or tuple(f"x{i + 1}" for i in range(fit.gamma.size))
    width = max([len("covariate"), *(len(n) for n in names)])
    lines = [f"{'covariate'.ljust(width)}  {'estimate':>10}  {'se':>10}"]
    lines += [f"{n.ljust(width)}  {g:10.4f}  {s:10.4f}" for n, g, s in zip(names, fit.gamma, se)]
    lines.append(f"degree {fit.degree}  tau {fit.tau:g}  loglik {fit.loglik:.4f}  converged {fit.converged}")
    return "\n".join(lines) + "\n"


def cmd_fit(args) -> int:
    fit = _run_fit(args)
    text = json.dumps(fit.to_dict(), indent=2) + "\n" if args.format == "json" else _fit_table(fit)
    _emit(text, args.output)
    return EXIT_OK if fit.converged else EXIT_NOT_CONVERGED


def cmd_degree_scan(args) -> int:
    fit = _run_fit(args)
    rows = [{"m": r["m"], "loglik": r["loglik"], "R": r["R"], "converged": r.get("converged", True),
             "selected": r["m"] == fit.degree} for r in fit.degree_trace]
    if args.format == "json":
        text = json.dumps(rows, indent=2) + "\n"
    elif args.format == "csv":
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
        text = buf.getvalue()
    else:
        lines = [f"{'m':>4}  {'loglik':>14}  {'R':>12}"]
        for r in rows:
            R = "" if r["R"] is None else f"{r['R']:.6f}"
            lines.append(f"{r['m']:>4}  {r['loglik']:14.6f}  {R:>12}{'  *' if r['selected'] else ''}")
        text = "\n".join(lines) + "\n"
    _emit(text, args.output)
    return EXIT_OK if fit.converged else EXIT_NOT_CONVERGED


def parse_times(spec: str) -> np.ndarray:
    if ":" in spec:
        parts = spec.split(":")
        if len(parts) != 3:
            raise CliError("--times range must be 'start:stop:count'")
        try:
            start, stop, count = float(parts[0]), float(parts[1]), int(parts[2])
        except ValueError:
            raise CliError(f"cannot parse --times {spec!r}") from None
        if count < 1:
            raise CliError("--times count must be at least 1")
        t = np.linspace(start, stop, count)
    else:
        t = np.array(_float_list(spec))
    if t.size == 0:
        raise CliError("no prediction times given")
    if np.any(t < 0) or not np.all(np.isfinite(t)):
        raise CliError("prediction times must be finite and nonnegative")
    return t


def parse_at(spec: str, names: tuple[str, ...], dim: int) -> np.ndarray:
    if spec.strip().lower() in ("all-zeros", "zeros", "0"):
        return np.zeros(dim)
    if "=" in spec:
        values = {}
        for item in spec.split(","):
            key, _, val = item.partition("=")
            try:
                values[key.strip()] = float(val)
            except ValueError:
                raise CliError(f"cannot parse covariate value {item!r}") from None
        unknown = set(values) - set(names)
        if unknown:
            raise CliError(f"unknown covariate(s): {', '.join(sorted(unknown))}")
        if set(values) != set(names):
            raise CliError(f"expected values for {', '.join(names)}")
        return np.array([values[n] for n in names])
    x = np.array(_float_list(spec))
    if x.size != dim:
        raise CliError(f"expected {dim} covariate values, got {x.size}")
    return x


def cmd_predict(args) -> int:
    try:
        fit = FitResult.from_dict(json.loads(Path(args.fit).read_text(encoding="utf-8")))
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot read fit from {args.fit}: {exc}") from None
    x = parse_at(args.at, fit.covariate_names, fit.gamma.size)
    t = parse_times(args.times)
    dens = predict_density(fit, x, t)
    surv = predict_survival(fit, x, t)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "density", "survival"])
    for row in zip(t, dens, surv):
        w.writerow([repr(float(v)) for v in row])
    _emit(buf.getvalue(), args.output)
    return EXIT_OK


def cmd_simulate(args) -> int:
    overrides = {}
    if args.inspect_len is not None:
        overrides["inspect_len"] = args.inspect_len
    if args.cen_prob is not None:
        overrides["cen_prob"] = args.cen_prob
    try:
        scheme = Scheme.named(args.scheme, **overrides)
        design = SimDesign(n=args.n, scheme=scheme, replications=args.reps, seed=args.seed)
        cfg = FitConfig(degree_min=args.degree_min, degree_max=args.degree_max)
    except ValueError as exc:
        raise CliError(str(exc)) from None
    res = run_design(design, cfg, compare=args.compare == "parametric", workers=_threads(args))
    text = res.to_json() + "\n" if args.format == "json" else format_table([res])
    _emit(text, args.output)
    return EXIT_OK if res.failures == 0 else EXIT_NOT_CONVERGED


COMMANDS = {"fit": cmd_fit, "degree-scan": cmd_degree_scan, "predict": cmd_predict, "simulate": cmd_simulate}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (CliError, DataError, FitError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
