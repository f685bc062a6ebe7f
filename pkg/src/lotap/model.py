"""Low-rank tensor autoregressive predictor: trainer, forecaster, persistence.

The model keeps shared column-orthogonal factors ``u`` (n1 x r x n3) and
``v`` (n2 x r x n3) and a core series ``s_t`` (r x r x n3) that follows a
scalar AR(p) recurrence, fitted by minimizing

    sum_{t>p} ||s_t - sum_i a_i s_{t-i}||_F^2 + phi sum_t ||x_t - u*s_t*v^H||_F^2

with alternating closed-form updates on the Fourier-domain slices. All
Fourier quantities are stacks with the frequency axis in position -3:
``u_hat`` (n3, n1, r), ``v_hat`` (n3, n2, r), ``s_hat`` (T, n3, r, r).
"""

from __future__ import annotations

import enum
import logging
import struct
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.linalg import solveh_banded

from ._fileio import atomic_write
from .ar import ArCoefficients, fit_yule_walker, predict_next
from .data import TensorSeries
from .errors import (
    InsufficientDataError,
    MalformedHeaderError,
    TruncatedFileError,
    ValidationError,
    VersionMismatchError,
)
from .tensor import (
    conj_transpose,
    fourier_slices,
    from_fourier_slices,
    map_half_spectrum,
    t_product,
)

log = logging.getLogger(__name__)


# "exact" minimizes the objective over all cores jointly; "sweep" applies the
# per-time blend formula forward in time, reusing freshly updated lags.
CORE_UPDATES = ("exact", "sweep")


class DiagMode(str, enum.Enum):
    FULL = "full"
    RELAXED = "relaxed"


@dataclass(frozen=True)
class FitConfig:
    r: int
    p: int
    phi: float = 10.0
    diag_mode: DiagMode = DiagMode.RELAXED
    max_iters: int = 10
    rel_tol: float = 1e-3
    seed: int = 0
    ar_method: str = "lsq"
    core_update: str = "exact"

    def __post_init__(self):
        object.__setattr__(self, "diag_mode", DiagMode(self.diag_mode))

    def validate(self, dims: tuple[int, int, int] | None = None) -> None:
        if self.r < 1 or self.p < 1:
            raise ValidationError(f"rank r and order p must be >= 1 (r={self.r}, p={self.p})")
        if not self.phi > 0:
            raise ValidationError(f"phi must be > 0, got {self.phi}")
        if self.max_iters < 1:
            raise ValidationError(f"max_iters must be >= 1, got {self.max_iters}")
        if not self.rel_tol > 0:
            raise ValidationError(f"rel_tol must be > 0, got {self.rel_tol}")
        if self.ar_method not in ("lsq", "toeplitz"):
            raise ValidationError(f"unknown ar_method {self.ar_method!r}")
        if self.core_update not in CORE_UPDATES:
            raise ValidationError(f"core_update must be one of {CORE_UPDATES}, got {self.core_update!r}")
        if dims is not None and self.r > min(dims[0], dims[1]):
            raise ValidationError(f"r={self.r} exceeds min(n1, n2)={min(dims[0], dims[1])}")


@dataclass
class FitReport:
    iterations_run: int = 0
    rel_change_trace: list[float] = field(default_factory=list)
    objective_trace: list[float] = field(default_factory=list)
    per_step_timings: dict[str, float] = field(default_factory=dict)
    iteration_seconds: list[float] = field(default_factory=list)
    converged: bool = False
    # polar updates whose accumulation matrix had fewer than r usable singular values
    degenerate_updates: int = 0
    # objective after each block (debug runs only)
    block_objectives: list[dict[str, float]] | None = None


@dataclass(frozen=True, eq=False)
class LotapModel:
    u_hat: np.ndarray
    v_hat: np.ndarray
    s_hat: np.ndarray
    coeffs: ArCoefficients
    config: FitConfig
    report: FitReport = field(default_factory=FitReport)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.u_hat.shape[1], self.v_hat.shape[1], self.u_hat.shape[0]

    @property
    def T(self) -> int:
        return self.s_hat.shape[0]

    @property
    def u(self) -> np.ndarray:
        return from_fourier_slices(self.u_hat, real=True)

    @property
    def v(self) -> np.ndarray:
        return from_fourier_slices(self.v_hat, real=True)

    @property
    def cores(self) -> np.ndarray:
        """Real-domain cores, shape ``(T, r, r, n3)``."""
        return from_fourier_slices(self.s_hat, real=True)

    def reconstruct(self, t: int) -> np.ndarray:
        """In-sample reconstruction ``u * s_t * v^H``."""
        return _synthesize(self.u_hat, self.s_hat[t:t + 1], self.v_hat)[0]


# -- closed-form block updates ---------------------------------------------

def _hermitian(a: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(a, -1, -2))


def diag_project(s: np.ndarray) -> np.ndarray:
    """Keep the diagonal of the trailing r x r matrices, zero the rest."""
    return s * np.eye(s.shape[-1], dtype=bool)


def _blend(projected, lag_prediction, phi: float, diag_mode: DiagMode):
    if lag_prediction is None:
        out = projected
    else:
        out = (lag_prediction + phi * projected) / (1.0 + phi)
    return diag_project(out) if diag_mode is DiagMode.FULL else out


def update_s_slice(history, u_slice, v_slice, x_slice, coeffs, phi: float, t: int,
                   diag_mode: DiagMode = DiagMode.RELAXED) -> np.ndarray:
    """Core update for one Fourier slice at (0-based) time ``t``.

    ``history`` holds the already-updated earlier cores in time order; it is
    only read when ``t >= p``. Earlier times use the projection alone.
    """
    diag_mode = DiagMode(diag_mode)
    projected = _hermitian(u_slice) @ x_slice @ v_slice
    p = coeffs.p if isinstance(coeffs, ArCoefficients) else len(coeffs)
    lag = predict_next(coeffs, history) if t >= p else None
    return _blend(projected, lag, phi, diag_mode)


def polar_factor(m: np.ndarray) -> tuple[np.ndarray, bool]:
    """``L R^H`` from the thin SVD ``m = L diag(sigma) R^H``.

    It maximizes ``Re tr(Q m^H)`` over matrices with orthonormal columns.
    The flag reports a numerically rank-deficient ``m``; the columns for its
    null directions then come from LAPACK's orthonormal completion.
    """
    l, sigma, rh = np.linalg.svd(m, full_matrices=False)
    degenerate = sigma.size == 0 or sigma[-1] <= sigma[0] * 1e-12 * max(m.shape)
    return l @ rh, bool(degenerate)


def update_u_slice(x_slices, v_slice, s_slices) -> np.ndarray:
    """Left factor maximizing ``Re tr(U M^H)`` with ``M = sum_t X_t V S_t^H``."""
    m = sum(x @ v_slice @ _hermitian(s) for x, s in zip(x_slices, s_slices))
    return polar_factor(m)[0]


def update_v_slice(x_slices, u_slice, s_slices) -> np.ndarray:
    """Right factor from ``N = sum_t X_t^H U S_t``."""
    n = sum(_hermitian(x) @ u_slice @ s for x, s in zip(x_slices, s_slices))
    return polar_factor(n)[0]


# -- fitting ----------------------------------------------------------------

def _as_array(series) -> np.ndarray:
    data = series.data if isinstance(series, TensorSeries) else TensorSeries(series).data
    if not np.all(np.isfinite(data)):
        raise ValidationError("series contains non-finite values")
    return data


def _init_factor(rng: np.random.Generator, n: int, r: int, n3: int) -> np.ndarray:
    stack = fourier_slices(rng.standard_normal((n, r, n3)))
    return map_half_spectrum(lambda m: np.linalg.qr(m)[0], stack, (n, r))


def core_series(s_hat: np.ndarray) -> np.ndarray:
    """Real-domain core entries flattened to ``(T, r*r*n3)``, the input of the
    AR fit. Pooling every entry makes the fit the exact minimizer of the AR
    term; with diagonal cores the off-diagonal zeros contribute nothing."""
    real = np.fft.ifft(s_hat, axis=1)
    imag = np.linalg.norm(real.imag.ravel())
    if imag > 1e-8 * max(np.linalg.norm(real.ravel()), np.finfo(float).tiny):
        log.warning("cores carry imaginary residue %.3e", imag)
    return real.real.reshape(s_hat.shape[0], -1)


def _ar_prediction(s_hat: np.ndarray, a: np.ndarray) -> np.ndarray:
    """``sum_i a_i s_{t-i}`` for every ``t >= p``."""
    T, p = s_hat.shape[0], a.size
    pred = a[0] * s_hat[p - 1:T - 1]
    for i in range(1, p):
        pred = pred + a[i] * s_hat[p - 1 - i:T - 1 - i]
    return pred


def _sweep_cores(proj: np.ndarray, s_hat: np.ndarray, a: np.ndarray, phi: float,
                 diag_mode: DiagMode) -> None:
    # sequential in t: each lag uses the value updated earlier in this sweep
    p = a.size
    for t in range(proj.shape[0]):
        lag = None
        if t >= p:
            lag = a[0] * s_hat[t - 1]
            for i in range(1, p):
                lag = lag + a[i] * s_hat[t - 1 - i]
        s_hat[t] = _blend(proj[t], lag, phi, diag_mode)


def _ar_normal_bands(a: np.ndarray, T: int, phi: float) -> np.ndarray:
    """Lower band storage of ``R^T R + phi I``, where ``R`` maps a sequence
    ``s_0..s_{T-1}`` to its AR residuals ``s_t - sum_i a_i s_{t-i}``, ``t >= p``."""
    p = a.size
    c = np.concatenate(([1.0], -a))  # weight of s_{t-u} in residual t
    bands = np.zeros((p + 1, T))
    bands[0] += phi
    rows = np.arange(p, T)
    for u in range(p + 1):
        for v in range(u, p + 1):
            bands[v - u, rows - v] += c[u] * c[v]
    return bands


def _solve_cores(proj: np.ndarray, s_hat: np.ndarray, a: np.ndarray, phi: float,
                 diag_mode: DiagMode) -> None:
    # the core subproblem separates over entries and every entry sequence
    # solves the same banded system (R^T R + phi I) s = phi * proj
    T = proj.shape[0]
    rhs = phi * (diag_project(proj) if diag_mode is DiagMode.FULL else proj)
    flat = np.ascontiguousarray(rhs).reshape(T, -1).view(np.float64)
    s_hat[...] = np.ascontiguousarray(solveh_banded(_ar_normal_bands(a, T, phi), flat, lower=True)).view(np.complex128).reshape(proj.shape)


def _update_cores(proj, s_hat, a, phi, config: "FitConfig") -> None:
    if config.core_update == "exact":
        _solve_cores(proj, s_hat, a, phi, config.diag_mode)
    else:
        _sweep_cores(proj, s_hat, a, phi, config.diag_mode)


def _objective(x_norm2: float, proj: np.ndarray, s_hat: np.ndarray, a: np.ndarray,
               phi: float, n3: int) -> float:
    """Objective from Fourier quantities; ``proj = U^H X_t V`` for the
    current factors (orthonormal columns make ``||U S V^H|| = ||S||``)."""
    resid = s_hat[a.size:] - _ar_prediction(s_hat, a)
    ar_term = np.vdot(resid, resid).real
    fid = x_norm2 - 2 * np.vdot(s_hat, proj).real + np.vdot(s_hat, s_hat).real
    return float((ar_term + phi * max(fid, 0.0)) / n3)


def objective(model: LotapModel, series) -> float:
    """Training objective of ``model`` on ``series`` via Fourier slices."""
    xh = np.ascontiguousarray(np.moveaxis(np.fft.fft(_as_array(series), axis=3), 3, 1))
    proj = _hermitian(model.u_hat) @ xh @ model.v_hat
    x_norm2 = np.vdot(xh, xh).real
    return _objective(x_norm2, proj, model.s_hat, model.coeffs.a, model.config.phi, xh.shape[1])


def objective_real(series, u: np.ndarray, v: np.ndarray, cores: np.ndarray,
                   a, phi: float) -> float:
    """The same objective evaluated with explicit t-products in the
    original domain; a slow reference for tests."""
    data = _as_array(series)
    a = np.asarray(a, dtype=np.float64)
    vh = conj_transpose(v)
    fid = sum(np.linalg.norm((x - t_product(t_product(u, s), vh)).ravel()) ** 2 for x, s in zip(data, cores))
    ar_term = 0.0
    for t in range(a.size, len(cores)):
        pred = sum(a[i] * cores[t - 1 - i] for i in range(a.size))
        ar_term += np.linalg.norm((cores[t] - pred).ravel()) ** 2
    return float(ar_term + phi * fid)


def fit(series, config: FitConfig, *, check_descent: bool = False) -> LotapModel:
    """Fit shared factors, cores and AR coefficients by alternating minimization.

    Each iteration refits the AR coefficients on the cores, updates the
    cores (``config.core_update``), then updates ``u`` and ``v`` by polar
    factors. With ``core_update="exact"`` every block is the exact minimizer
    of its subproblem, so the objective never increases.
    Iteration stops once the relative factor change
    ``(||du||^2 + ||dv||^2) / (||u||^2 + ||v||^2)`` drops below
    ``config.rel_tol`` or after ``config.max_iters`` iterations; the AR
    coefficients are then refitted on the final cores.

    ``check_descent`` records the objective after every block in
    ``report.block_objectives`` (costs one extra objective per block).
    """
    data = _as_array(series)
    T, n1, n2, n3 = data.shape
    config.validate((n1, n2, n3))
    r, p, phi = config.r, config.p, config.phi
    if T <= p:
        raise InsufficientDataError(f"need more than p={p} time points, got T={T}")

    timings = dict.fromkeys(("init", "ar", "s_update", "u_update", "v_update", "objective"), 0.0)
    report = FitReport(per_step_timings=timings, block_objectives=[] if check_descent else None)
    clock = time.perf_counter
    t0 = clock()

    rng = np.random.default_rng(config.seed)
    u_hat = _init_factor(rng, n1, r, n3)
    v_hat = _init_factor(rng, n2, r, n3)
    xh = np.ascontiguousarray(np.moveaxis(np.fft.fft(data, axis=3), 3, 1))  # (T, n3, n1, n2)
    xh_h = np.ascontiguousarray(_hermitian(xh))
    x_norm2 = float(np.vdot(xh, xh).real)
    proj = _hermitian(u_hat) @ xh @ v_hat
    s_hat = diag_project(proj) if config.diag_mode is DiagMode.FULL else proj.copy()
    timings["init"] += clock() - t0

    def polar(m):
        q, degenerate = polar_factor(m)
        report.degenerate_updates += degenerate
        return q

    def trace_block(name, pr, a):
        if check_descent:
            report.block_objectives[-1][name] = _objective(x_norm2, pr, s_hat, a, phi, n3)

    coeffs = None
    for _ in range(config.max_iters):
        t_iter = clock()
        if check_descent:
            report.block_objectives.append({})
            if coeffs is not None:
                trace_block("start", proj, coeffs.a)

        t0 = clock()
        coeffs = fit_yule_walker(core_series(s_hat), p, config.ar_method)
        timings["ar"] += clock() - t0
        trace_block("ar", proj, coeffs.a)

        t0 = clock()
        _update_cores(proj, s_hat, coeffs.a, phi, config)
        timings["s_update"] += clock() - t0
        trace_block("s", proj, coeffs.a)

        t0 = clock()
        xv = xh @ v_hat
        new_u = map_half_spectrum(polar, np.einsum("tkir,tksr->kis", xv, np.conj(s_hat)), (n1, r))
        timings["u_update"] += clock() - t0
        if check_descent:
            trace_block("u", _hermitian(new_u) @ xv, coeffs.a)

        t0 = clock()
        xu = xh_h @ new_u
        new_v = map_half_spectrum(polar, np.einsum("tkjr,tkrs->kjs", xu, s_hat), (n2, r))
        proj = _hermitian(xu) @ new_v
        timings["v_update"] += clock() - t0

        t0 = clock()
        change = (np.vdot(new_u - u_hat, new_u - u_hat).real + np.vdot(new_v - v_hat, new_v - v_hat).real) / (
            np.vdot(new_u, new_u).real + np.vdot(new_v, new_v).real
        )
        u_hat, v_hat = new_u, new_v
        obj = _objective(x_norm2, proj, s_hat, coeffs.a, phi, n3)
        timings["objective"] += clock() - t0
        if check_descent:
            report.block_objectives[-1]["v"] = obj

        report.iterations_run += 1
        report.rel_change_trace.append(float(change))
        report.objective_trace.append(obj)
        report.iteration_seconds.append(clock() - t_iter)
        if change < config.rel_tol:
            report.converged = True
            break

    coeffs = fit_yule_walker(core_series(s_hat), p, config.ar_method)
    if not report.converged:
        log.info("stopped after %d iterations, relative change %.3e", report.iterations_run,
                 report.rel_change_trace[-1])
    return LotapModel(u_hat, v_hat, s_hat, coeffs, config, report)


def refresh(model: LotapModel, series) -> LotapModel:
    """Recompute cores and AR coefficients for new data with ``u``, ``v`` frozen.

    Cores start from the projections ``u^H * x_t * v``; one core update
    blends in the AR structure and the coefficients are refitted.
    """
    data = _as_array(series)
    if data.shape[1:] != model.dims:
        raise ValidationError(f"series dims {data.shape[1:]} differ from model dims {model.dims}")
    cfg = model.config
    if data.shape[0] <= cfg.p:
        raise InsufficientDataError(f"need more than p={cfg.p} time points, got T={data.shape[0]}")
    xh = np.moveaxis(np.fft.fft(data, axis=3), 3, 1)
    proj = _hermitian(model.u_hat) @ xh @ model.v_hat
    s_hat = diag_project(proj) if cfg.diag_mode is DiagMode.FULL else proj.copy()
    coeffs = fit_yule_walker(core_series(s_hat), cfg.p, cfg.ar_method)
    _update_cores(proj, s_hat, coeffs.a, cfg.phi, cfg)
    coeffs = fit_yule_walker(core_series(s_hat), cfg.p, cfg.ar_method)
    return replace(model, s_hat=s_hat, coeffs=coeffs, report=FitReport())


# -- forecasting ------------------------------------------------------------

def _synthesize(u_hat, s_hat, v_hat) -> np.ndarray:
    """Real tensors ``u * s_t * v^H`` for a stack of Fourier cores."""
    return from_fourier_slices(u_hat @ s_hat @ _hermitian(v_hat), real=True)


def forecast_cores(model: LotapModel, horizon: int = 1) -> np.ndarray:
    """Fourier cores for ``T+1 .. T+horizon``; predictions feed later steps."""
    if horizon < 1:
        raise ValidationError(f"horizon must be >= 1, got {horizon}")
    p = model.coeffs.p
    if model.T < p:
        raise InsufficientDataError("model holds fewer cores than the AR order")
    history = list(model.s_hat[-p:])
    out = []
    for _ in range(horizon):
        nxt = predict_next(model.coeffs, history)
        history = history[1:] + [nxt]
        out.append(nxt)
    return np.stack(out)


def forecast(model: LotapModel, horizon: int = 1) -> TensorSeries:
    """Predict the next ``horizon`` slices as a real :class:`TensorSeries`."""
    return TensorSeries(_synthesize(model.u_hat, forecast_cores(model, horizon), model.v_hat))


# -- persistence ------------------------------------------------------------
#
# LOTP layout, little-endian throughout:
#   b"LOTP", version u16, n1 n2 n3 T r p (u64 each), phi f64, diag_mode u8
#   (0 = full, 1 = relaxed), then complex arrays as interleaved (re, im) f64
#   in C order: u_hat (n3, n1, r), v_hat (n3, n2, r), s_hat (T, n3, r, r);
#   AR coefficients p x f64; then a trailer: max_iters u32, rel_tol f64,
#   seed i64, ar_method u8 (0 = lsq, 1 = toeplitz), core_update u8
#   (0 = exact, 1 = sweep), rank_deficient u8,
#   stationary u8, iterations_run u32, converged u8, degenerate_updates u32,
#   rel_change_trace and objective_trace (iterations_run x f64 each).

MODEL_MAGIC = b"LOTP"
MODEL_VERSION = 1
_HEAD = struct.Struct("<4sH6QdB")
_TAIL = struct.Struct("<IdqBBBBIBI")
_AR_METHODS = ("lsq", "toeplitz")


def encode_model(model: LotapModel) -> bytes:
    n1, n2, n3 = model.dims
    cfg, rep = model.config, model.report
    parts = [
        _HEAD.pack(MODEL_MAGIC, MODEL_VERSION, n1, n2, n3, model.T, cfg.r, cfg.p, cfg.phi,
                   int(cfg.diag_mode is DiagMode.RELAXED)),
        np.ascontiguousarray(model.u_hat, dtype="<c16").tobytes(),
        np.ascontiguousarray(model.v_hat, dtype="<c16").tobytes(),
        np.ascontiguousarray(model.s_hat, dtype="<c16").tobytes(),
        np.ascontiguousarray(model.coeffs.a, dtype="<f8").tobytes(),
        _TAIL.pack(cfg.max_iters, cfg.rel_tol, cfg.seed, _AR_METHODS.index(cfg.ar_method),
                   CORE_UPDATES.index(cfg.core_update),
                   model.coeffs.rank_deficient, model.coeffs.stationary, rep.iterations_run,
                   rep.converged, rep.degenerate_updates),
        np.asarray(rep.rel_change_trace, dtype="<f8").tobytes(),
        np.asarray(rep.objective_trace, dtype="<f8").tobytes(),
    ]
    return b"".join(parts)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, size: int) -> bytes:
        if self.pos + size > len(self.buf):
            raise TruncatedFileError(f"model file ends at byte {len(self.buf)}, needed {self.pos + size}")
        out = self.buf[self.pos:self.pos + size]
        self.pos += size
        return out

    def array(self, dtype: str, shape) -> np.ndarray:
        count = int(np.prod(shape))
        raw = self.take(np.dtype(dtype).itemsize * count)
        return np.frombuffer(raw, dtype=dtype).reshape(shape).astype(dtype[1:])


def decode_model(buf: bytes) -> LotapModel:
    if len(buf) >= 4 and buf[:4] != MODEL_MAGIC:
        raise MalformedHeaderError(f"bad magic {buf[:4]!r}, expected {MODEL_MAGIC!r}")
    if len(buf) >= 6:
        (version,) = struct.unpack_from("<H", buf, 4)
        if version != MODEL_VERSION:
            raise VersionMismatchError(f"model version {version} not supported (expected {MODEL_VERSION})")
    rd = _Reader(buf)
    _, _, n1, n2, n3, T, r, p, phi, relaxed = _HEAD.unpack(rd.take(_HEAD.size))
    u_hat = rd.array("<c16", (n3, n1, r))
    v_hat = rd.array("<c16", (n3, n2, r))
    s_hat = rd.array("<c16", (T, n3, r, r))
    a = rd.array("<f8", (p,))
    max_iters, rel_tol, seed, method, core, rank_def, stationary, iters, converged, degenerate = _TAIL.unpack(
        rd.take(_TAIL.size))
    rel_trace = rd.array("<f8", (iters,))
    obj_trace = rd.array("<f8", (iters,))
    if rd.pos != len(buf):
        raise MalformedHeaderError("trailing bytes after model payload")
    if method >= len(_AR_METHODS) or core >= len(CORE_UPDATES):
        raise MalformedHeaderError(f"unknown method codes {method}, {core}")
    config = FitConfig(r=r, p=p, phi=phi, diag_mode=DiagMode.RELAXED if relaxed else DiagMode.FULL,
                       max_iters=max_iters, rel_tol=rel_tol, seed=seed, ar_method=_AR_METHODS[method],
                       core_update=CORE_UPDATES[core])
    report = FitReport(iterations_run=iters, rel_change_trace=rel_trace.tolist(),
                       objective_trace=obj_trace.tolist(), converged=bool(converged),
                       degenerate_updates=degenerate)
    coeffs = ArCoefficients(a, rank_deficient=bool(rank_def), stationary=bool(stationary))
    return LotapModel(u_hat, v_hat, s_hat, coeffs, config, report)


def save_model(model: LotapModel, path) -> None:
    with atomic_write(path, "wb") as fh:
        fh.write(encode_model(model))


def load_model(path) -> LotapModel:
    return decode_model(Path(path).read_bytes())
