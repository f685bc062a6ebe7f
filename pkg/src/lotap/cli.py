"""Command-line entry point: ``lotap <subcommand> [flags]``.

Exit codes: 0 ok, 2 usage or validation error, 3 fit stopped at
``--max-iters`` without meeting ``--rel-tol`` (model still written),
4 I/O or file-format error, 5 numerical failure.
"""

from __future__ import annotations

import argparse
import contextlib
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .data import NOISE_MODES, SYN_AR_COEFFS, SynConfig, generate_syn, load_series, save_ground_truth, save_series
from .errors import FormatError, NumericalError, ValidationError
from .evaluate import (
    REFIT_MODES,
    convergence_trace_csv,
    persistence_mspe,
    rank_analysis,
    rolling_evaluate,
    subspace_stability,
    timing_benchmark,
    write_eval_csv,
    write_rank_csv,
    write_subspace_csv,
    write_timing_csv,
)
from .model import DiagMode, FitConfig, fit, forecast, load_model, save_model

log = logging.getLogger("lotap")

EXIT_OK, EXIT_USAGE, EXIT_NOT_CONVERGED, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4, 5


class UsageError(Exception):
    pass


# Defaults live here rather than in argparse so that a value given on the
# command line can be told apart from one that was merely defaulted.
DEFAULTS = {
    "n1": 100, "n2": 100, "n3": 10, "rank": 4, "length": 1000, "rho": 0.01, "seed": 0,
    "ar_coeffs": list(SYN_AR_COEFFS), "burn_in": 200, "innovation_std": 0.0, "noise": "normalized",
    "drift": 0.0, "order": 2, "phi": 10.0, "diag": "relaxed", "max_iters": 10, "rel_tol": 1e-3,
    "ar_method": "lsq", "core_update": "exact", "train": None, "horizon": 1, "refit": "every", "origins": None,
    "rank_tol": 1e-2, "count": 50, "repeats": 5, "warmup": 1, "iterations": 3,
    "grid": "60,60,8,80,4;60,60,8,160,4;60,60,8,80,2", "threads": None,
}


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _fit_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("model")
    g.add_argument("--rank", type=int, help="truncation rank r (default 4)")
    g.add_argument("--order", type=int, help="AR order p (default 2)")
    g.add_argument("--phi", type=float, help="fidelity weight (default 10)")
    g.add_argument("--diag", choices=[m.value for m in DiagMode], help="core structure (default relaxed)")
    g.add_argument("--max-iters", type=int, help="iteration cap (default 10)")
    g.add_argument("--rel-tol", type=float, help="stop when the relative factor change drops below this (default 1e-3)")
    g.add_argument("--seed", type=int, help="factor initialization seed (default 0)")
    g.add_argument("--ar-method", choices=["lsq", "toeplitz"], help="AR estimator (default lsq)")
    g.add_argument("--core-update", choices=["exact", "sweep"],
                   help="core update: joint banded solve or forward sweep (default exact)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lotap", description="Low-rank tensor AR forecasting.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--config", type=Path, help="TOML file with flag defaults")
    parser.add_argument("--threads", type=int, help="BLAS/LAPACK thread cap (default: all cores)")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic series and its ground truth")
    p.add_argument("--output", "-o", type=Path, required=True, help="TSR3 output path")
    p.add_argument("--truth", type=Path, help="ground-truth JSON path (default <output>.truth.json)")
    for name in ("n1", "n2", "n3", "rank", "length", "seed", "burn-in"):
        p.add_argument(f"--{name}", type=int)
    for name in ("rho", "innovation-std", "drift"):
        p.add_argument(f"--{name}", type=float)
    p.add_argument("--ar-coeffs", type=_floats, help="comma-separated AR coefficients, most recent lag first")
    p.add_argument("--noise", choices=NOISE_MODES)

    p = sub.add_parser("fit", help="fit a model; exit 3 if it did not converge")
    p.add_argument("--input", "-i", type=Path, required=True)
    p.add_argument("--model", "-m", type=Path, required=True, help="LOTP model output path")
    p.add_argument("--trace", type=Path, help="convergence CSV (default <model>.trace.csv)")
    p.add_argument("--train", type=int, help="fit on the first N slices only")
    _fit_flags(p)

    p = sub.add_parser("forecast", help="forecast the next slices from a saved model")
    p.add_argument("--model", "-m", type=Path, required=True)
    p.add_argument("--output", "-o", type=Path, required=True, help="TSR3 output path")
    p.add_argument("--horizon", type=int)

    p = sub.add_parser("evaluate", help="rolling one-step evaluation")
    p.add_argument("--input", "-i", type=Path, required=True)
    p.add_argument("--output", "-o", type=Path, help="per-origin error CSV")
    p.add_argument("--train", type=int, help="sliding window length (default 80)")
    p.add_argument("--origins", type=int, help="limit the number of test origins")
    p.add_argument("--refit", choices=REFIT_MODES)
    _fit_flags(p)

    p = sub.add_parser("rank-analysis", help="tubal and average Tucker rank of every slice")
    p.add_argument("--input", "-i", type=Path, required=True)
    p.add_argument("--output", "-o", type=Path, required=True)
    p.add_argument("--rank-tol", type=float, help="relative singular value threshold (default 1e-2)")

    p = sub.add_parser("subspace-stability", help="left-factor drift against the first slice")
    p.add_argument("--input", "-i", type=Path, required=True)
    p.add_argument("--output", "-o", type=Path, required=True)
    p.add_argument("--rank", type=int)
    p.add_argument("--count", type=int, help="number of leading slices (default 50)")
    p.add_argument("--rank-tol", type=float)

    p = sub.add_parser("benchmark", help="median per-iteration fit time over a grid")
    p.add_argument("--output", "-o", type=Path, required=True)
    p.add_argument("--grid", help="';'-separated n1,n2,n3,T,r entries")
    p.add_argument("--repeats", type=int)
    p.add_argument("--warmup", type=int)
    p.add_argument("--iterations", type=int, help="iterations per timed fit (default 3)")
    _fit_flags(p)
    return parser


def _load_toml(path: Path, command: str) -> tuple[dict, dict]:
    try:
        import tomllib
    except ModuleNotFoundError:
        import tomli as tomllib
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise UsageError(f"{path}: {exc}") from exc

    def norm(d):
        return {k.replace("-", "_"): v for k, v in d.items()}

    shared = norm({k: v for k, v in doc.items() if not isinstance(v, dict)})
    return shared, norm(doc.get(command, {}))


_PATH_KEYS = {"input", "output", "model", "trace", "truth"}


def resolve(args: argparse.Namespace) -> argparse.Namespace:
    """Fill unset flags from the TOML file, then from built-in defaults.

    Top-level TOML keys are shared by all subcommands and ignored where they
    do not apply; keys in a ``[<subcommand>]`` table must be valid flags.
    Explicit flags always win.
    """
    known = vars(args)
    if args.config:
        shared, specific = _load_toml(args.config, args.command)
        for key in specific:
            if key not in known or key in ("command", "config", "verbose"):
                raise UsageError(f"unknown key {key!r} in [{args.command}] of {args.config}")
        values = {k: v for k, v in shared.items() if k in known and k not in ("command", "config")}
        values.update(specific)
        for key, value in values.items():
            if key in _PATH_KEYS:
                value = Path(value)
            if known[key] is None:
                setattr(args, key, value)
            elif known[key] != value:
                log.warning("flag --%s=%s overrides %s from %s", key.replace("_", "-"), known[key], value,
                            args.config)
    for key, value in DEFAULTS.items():
        if key in known and getattr(args, key) is None:
            setattr(args, key, value)
    return args


def fit_config(args) -> FitConfig:
    cfg = FitConfig(r=args.rank, p=args.order, phi=args.phi, diag_mode=args.diag, max_iters=args.max_iters,
                    rel_tol=args.rel_tol, seed=args.seed, ar_method=args.ar_method,
                    core_update=args.core_update)
    cfg.validate()
    return cfg


def cmd_generate(args) -> int:
    cfg = SynConfig(n1=args.n1, n2=args.n2, n3=args.n3, r=args.rank, T=args.length,
                    ar_coeffs=tuple(args.ar_coeffs), rho=args.rho, seed=args.seed, burn_in=args.burn_in,
                    innovation_std=args.innovation_std, noise=args.noise, drift=args.drift)
    cfg.validate()
    series, truth = generate_syn(cfg)
    save_series(series, args.output)
    save_ground_truth(truth, args.truth or args.output.with_name(args.output.name + ".truth.json"))
    log.info("wrote %d slices of %s to %s", series.T, series.dims, args.output)
    return EXIT_OK


def cmd_fit(args) -> int:
    cfg = fit_config(args)
    series = load_series(args.input)
    if args.train is not None:
        if not 1 <= args.train <= series.T:
            raise ValidationError(f"--train must lie in [1, {series.T}]")
        series = series[:args.train]
    cfg.validate(series.dims)
    model = fit(series, cfg)
    save_model(model, args.model)
    convergence_trace_csv(model.report, args.trace or args.model.with_name(args.model.name + ".trace.csv"))
    rep = model.report
    if not rep.converged:
        log.warning("no convergence after %d iterations (last relative change %.3e)",
                    rep.iterations_run, rep.rel_change_trace[-1])
        return EXIT_NOT_CONVERGED
    log.info("converged after %d iterations", rep.iterations_run)
    return EXIT_OK


def cmd_forecast(args) -> int:
    if args.horizon < 1:
        raise ValidationError("--horizon must be >= 1")
    model = load_model(args.model)
    save_series(forecast(model, args.horizon), args.output)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = fit_config(args)
    train = 80 if args.train is None else args.train
    series = load_series(args.input)
    cfg.validate(series.dims)
    report = rolling_evaluate(series, train, cfg, refit=args.refit, max_origins=args.origins)
    baseline = persistence_mspe(series, train, args.origins)
    if args.output:
        write_eval_csv(report, args.output)
    print(f"mspe {report.mspe!r}")
    print(f"persistence_mspe {baseline!r}")
    print(f"origins {len(report.origins)}")
    return EXIT_OK


def cmd_rank_analysis(args) -> int:
    if not 0 < args.rank_tol < 1:
        raise ValidationError("--rank-tol must lie in (0, 1)")
    write_rank_csv(rank_analysis(load_series(args.input), args.rank_tol), args.output)
    return EXIT_OK


def cmd_subspace_stability(args) -> int:
    series = load_series(args.input)
    write_subspace_csv(subspace_stability(series, args.rank, args.count, args.rank_tol), args.output)
    return EXIT_OK


def parse_grid(text: str) -> list[tuple[int, ...]]:
    grid = []
    for entry in filter(None, (e.strip() for e in text.split(";"))):
        try:
            dims = tuple(int(v) for v in entry.split(","))
        except ValueError as exc:
            raise UsageError(f"bad grid entry {entry!r}") from exc
        if len(dims) != 5 or min(dims) < 1:
            raise UsageError(f"grid entry {entry!r} needs five positive integers n1,n2,n3,T,r")
        grid.append(dims)
    if not grid:
        raise UsageError("--grid is empty")
    return grid


def cmd_benchmark(args) -> int:
    cfg = fit_config(args)
    grid = parse_grid(args.grid)
    for n1, n2, n3, T, r in grid:
        FitConfig(r=r, p=cfg.p).validate((n1, n2, n3))
    rows = timing_benchmark(grid, cfg, repeats=args.repeats, warmup=args.warmup, iterations=args.iterations)
    write_timing_csv(rows, args.output)
    return EXIT_OK


COMMANDS = {
    "generate": cmd_generate,
    "fit": cmd_fit,
    "forecast": cmd_forecast,
    "evaluate": cmd_evaluate,
    "rank-analysis": cmd_rank_analysis,
    "subspace-stability": cmd_subspace_stability,
    "benchmark": cmd_benchmark,
}


def _thread_limit(threads):
    if threads is None:
        return contextlib.nullcontext()
    if threads < 1:
        raise UsageError("--threads must be >= 1")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=threads)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        resolve(args)
        with _thread_limit(args.threads):
            return COMMANDS[args.command](args)
    except (UsageError, ValidationError) as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except (FormatError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_IO
    except (NumericalError, ArithmeticError, np.linalg.LinAlgError) as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
