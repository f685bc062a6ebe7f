"""Rolling-origin evaluation, MSPE, timing grids and diagnostic CSV reports."""

from __future__ import annotations

import contextlib
import statistics
import time
from dataclasses import dataclass, field, replace

import numpy as np

from ._fileio import write_csv
from .data import TensorSeries
from .errors import LotapError, ValidationError
from .model import FitConfig, FitReport, fit, forecast, refresh
from .tsvd import DEFAULT_RANK_TOL, avg_tucker_rank, left_factor, subspace_residual, tubal_rank

REFIT_MODES = ("every", "once")


@dataclass
class EvalReport:
    per_point_errors: list[float]
    origins: list[int]
    mspe: float
    mean_iteration_seconds: float
    mean_forecast_seconds: float
    config: FitConfig
    refit: str
    train_count: int
    iterations: list[int] = field(default_factory=list)


def _data(series) -> np.ndarray:
    return series.data if isinstance(series, TensorSeries) else TensorSeries(series).data


def relative_errors(truth, pred) -> np.ndarray:
    truth, pred = _data(truth), _data(pred)
    if truth.shape != pred.shape:
        raise ValidationError(f"shape mismatch: truth {truth.shape} vs prediction {pred.shape}")
    denom = np.linalg.norm(truth.reshape(len(truth), -1), axis=1)
    if np.any(denom == 0):
        bad = int(np.flatnonzero(denom == 0)[0])
        raise ValidationError(f"truth slice {bad} has zero norm; relative error undefined")
    return np.linalg.norm((truth - pred).reshape(len(truth), -1), axis=1) / denom


def mspe(truth, pred) -> float:
    """Mean over time of ``||x_t - p_t||_F / ||x_t||_F``."""
    return float(np.mean(relative_errors(truth, pred)))


def persistence_mspe(series, train_count: int, max_origins: int | None = None) -> float:
    """MSPE of predicting each test slice by the slice just before it."""
    data = _data(series)
    stop = len(data) if max_origins is None else min(len(data), train_count + max_origins)
    return mspe(data[train_count:stop], data[train_count - 1:stop - 1])


def rolling_evaluate(series, train_count: int, config: FitConfig, refit: str = "every",
                     max_origins: int | None = None) -> EvalReport:
    """One-step forecasts over a sliding window of ``train_count`` true slices.

    Each origin ``t`` forecasts slice ``t`` from slices ``t-train_count .. t-1``;
    the true slice is then added to the history. ``refit="every"`` fits a
    fresh model per origin; ``"once"`` keeps the first model's factors and
    only recomputes cores and AR coefficients as the window slides.
    """
    data = _data(series)
    if refit not in REFIT_MODES:
        raise ValidationError(f"refit must be one of {REFIT_MODES}, got {refit!r}")
    if train_count < config.p + 1:
        raise ValidationError(f"train_count={train_count} must be at least p + 1 = {config.p + 1}")
    stop = len(data) if max_origins is None else min(len(data), train_count + max_origins)
    if stop <= train_count:
        raise ValidationError("no test slices after the training window")

    errors, origins, iters = [], [], []
    fit_seconds = 0.0
    fc_seconds = 0.0
    base = None
    for t in range(train_count, stop):
        window = TensorSeries(data[t - train_count:t])
        try:
            if refit == "every" or base is None:
                model = fit(window, config)
                base = model
                fit_seconds += sum(model.report.iteration_seconds)
                iters.append(model.report.iterations_run)
            else:
                model = refresh(base, window)
            start = time.perf_counter()
            pred = forecast(model).data[0]
            fc_seconds += time.perf_counter() - start
            errors.append(float(relative_errors(data[t:t + 1], pred[None])[0]))
        except LotapError as exc:
            raise type(exc)(f"origin t={t}: {exc}") from exc
        origins.append(t)
    return EvalReport(
        per_point_errors=errors,
        origins=origins,
        mspe=float(np.mean(errors)),
        mean_iteration_seconds=fit_seconds / max(sum(iters), 1),
        mean_forecast_seconds=fc_seconds / len(errors),
        config=config,
        refit=refit,
        train_count=train_count,
        iterations=iters,
    )


def eval_rows(report: EvalReport):
    for t, err in zip(report.origins, report.per_point_errors):
        yield t, err


def write_eval_csv(report: EvalReport, path) -> None:
    write_csv(path, ("origin", "relative_error"), eval_rows(report))


def _thread_limit(threads: int | None):
    if threads is None:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=threads)


def _timing_case(dims, config: FitConfig, iterations: int | None, seed: int):
    n1, n2, n3, T = dims
    data = np.random.default_rng(seed).standard_normal((T, n1, n2, n3))
    # no convergence stop, so every run performs the same number of iterations
    cfg = replace(config, rel_tol=np.finfo(float).tiny,
                  max_iters=iterations if iterations is not None else config.max_iters)
    return TensorSeries(data), cfg


def _time_cases(cases, repeats: int, warmup: int) -> list[float]:
    # round-robin over cases so drift in machine load hits every case alike;
    # setup (data transforms, initial factors) is excluded
    samples = [[] for _ in cases]
    for k in range(warmup + repeats):
        for (series, cfg), out in zip(cases, samples):
            seconds = fit(series, cfg).report.iteration_seconds
            if k >= warmup:
                out.extend(seconds)
    return [statistics.median(s) for s in samples]


def time_fit(dims: tuple[int, int, int, int], config: FitConfig, repeats: int = 5, warmup: int = 1,
             iterations: int | None = None, seed: int = 0) -> float:
    """Median wall-clock seconds per outer iteration over ``repeats`` fits on
    random data of ``dims``."""
    return _time_cases([_timing_case(dims, config, iterations, seed)], repeats, warmup)[0]


def timing_benchmark(grid, config: FitConfig, repeats: int = 5, warmup: int = 1,
                     threads: int | None = None, iterations: int | None = None):
    """Rows ``(n1, n2, n3, T, r, ms_per_iteration)``, one per ``(n1, n2, n3, T, r)`` entry."""
    grid = list(grid)
    if not grid:
        raise ValidationError("timing grid is empty")
    cases = [_timing_case((n1, n2, n3, T), replace(config, r=r), iterations, 0) for n1, n2, n3, T, r in grid]
    with _thread_limit(threads):
        seconds = _time_cases(cases, repeats, warmup)
    return [(*point, sec * 1e3) for point, sec in zip(grid, seconds)]


def write_timing_csv(rows, path) -> None:
    write_csv(path, ("n1", "n2", "n3", "T", "r", "ms_per_iteration"), rows)


def convergence_rows(report: FitReport):
    for k, (rc, obj) in enumerate(zip(report.rel_change_trace, report.objective_trace), start=1):
        yield k, rc, obj


def convergence_trace_csv(report: FitReport, path) -> None:
    write_csv(path, ("iteration", "rel_change", "objective"), convergence_rows(report))


def rank_analysis(series, rel_tol: float = DEFAULT_RANK_TOL):
    """Rows ``(time_index, tubal_rank, avg_tucker_rank)`` for every slice."""
    return [(t, tubal_rank(x, rel_tol), avg_tucker_rank(x, rel_tol)) for t, x in enumerate(_data(series))]


def write_rank_csv(rows, path) -> None:
    write_csv(path, ("time_index", "tubal_rank", "avg_tucker_rank"), rows)


def subspace_stability(series, rank: int, count: int = 50, rel_tol: float | None = DEFAULT_RANK_TOL):
    """Rows ``(t, res_t)``: normalized distance of the rank-``rank`` left
    factor of slice ``t`` from that of the first slice, ``t = 1..count``."""
    data = _data(series)
    if count < 1 or count > len(data):
        raise ValidationError(f"count must lie in [1, {len(data)}], got {count}")
    n2 = data.shape[2]
    first = left_factor(data[0], rank, rel_tol)
    return [(t + 1, subspace_residual(first, left_factor(data[t], rank, rel_tol), n2)) for t in range(count)]


def write_subspace_csv(rows, path) -> None:
    write_csv(path, ("t", "residual"), rows)

