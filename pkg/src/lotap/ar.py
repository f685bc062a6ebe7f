"""Scalar AR(p) coefficients shared by a bundle of component series."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InsufficientDataError, ValidationError

METHODS = ("lsq", "toeplitz")


@dataclass(frozen=True)
class ArCoefficients:
    """Coefficients ``a[0..p-1]``; ``a[0]`` multiplies the most recent lag."""

    a: np.ndarray
    rank_deficient: bool = False
    stationary: bool = field(default=True)

    def __post_init__(self):
        a = np.atleast_1d(np.asarray(self.a, dtype=np.float64))
        if a.ndim != 1 or a.size < 1:
            raise ValidationError("AR coefficients must be a non-empty vector")
        if not np.all(np.isfinite(a)):
            raise ValidationError("AR coefficients must be finite")
        object.__setattr__(self, "a", a)

    @property
    def p(self) -> int:
        return self.a.size

    @classmethod
    def from_values(cls, values) -> "ArCoefficients":
        a = np.atleast_1d(np.asarray(values, dtype=np.float64))
        return cls(a, stationary=is_stationary(a))


def is_stationary(a) -> bool:
    """True when every root of ``z^p - a1 z^(p-1) - ... - ap`` lies strictly
    inside the unit circle."""
    a = np.asarray(a, dtype=np.float64)
    if not np.any(a):
        return True
    roots = np.roots(np.concatenate(([1.0], -a)))
    return bool(np.all(np.abs(roots) < 1.0))


def _as_components(series) -> np.ndarray:
    x = np.asarray(series, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    elif x.ndim > 2:
        x = x.reshape(x.shape[0], -1)
    if x.ndim != 2 or x.shape[1] < 1:
        raise ValidationError("series must be shaped (T,) or (T, d)")
    return x


def fit_yule_walker(series, p: int, method: str = "lsq") -> ArCoefficients:
    """Fit one set of AR(p) coefficients pooled over all components.

    ``series`` is ``(T,)`` or ``(T, d)`` (extra trailing axes are flattened).

    ``method="lsq"`` solves the lag normal equations
    ``sum_t x_{t-i} x_{t-j}`` / ``sum_t x_t x_{t-i}`` over ``t = p..T-1`` and
    all components, in least-squares form on the stacked lag matrix; it is
    exact for series that satisfy an AR(p) recurrence without noise.
    ``method="toeplitz"`` is the classical form: each component is centered,
    biased autocovariances are averaged over components and the ``p x p``
    Toeplitz system is solved.

    Rank-deficient systems return the minimum-norm solution and set
    ``rank_deficient``. Stationarity is reported, never enforced.
    """
    if p < 1:
        raise ValidationError(f"AR order must be >= 1, got {p}")
    if method not in METHODS:
        raise ValidationError(f"unknown method {method!r}; expected one of {METHODS}")
    x = _as_components(series)
    T, d = x.shape
    if T <= p:
        raise InsufficientDataError(f"need more than p={p} time points, got T={T}")

    if method == "lsq":
        lags = np.stack([x[p - i:T - i] for i in range(1, p + 1)], axis=-1)
        design = lags.reshape(-1, p)
        target = x[p:].reshape(-1)
        a, _, rank, _ = np.linalg.lstsq(design, target, rcond=None)
    else:
        xc = x - x.mean(axis=0)
        gamma = np.array([np.sum(xc[k:] * xc[:T - k]) for k in range(p + 1)]) / (T * d)
        idx = np.arange(p)
        toeplitz = gamma[np.abs(idx[:, None] - idx[None, :])]
        a, _, rank, _ = np.linalg.lstsq(toeplitz, gamma[1:], rcond=None)
    return ArCoefficients(a, rank_deficient=bool(rank < p), stationary=is_stationary(a))


def predict_next(coeffs, history):
    """``sum_i a_i * history[-i]``; works element-wise on array entries."""
    a = coeffs.a if isinstance(coeffs, ArCoefficients) else np.atleast_1d(np.asarray(coeffs, dtype=np.float64))
    p = a.size
    if len(history) < p:
        raise InsufficientDataError(f"history of length {len(history)} is shorter than p={p}")
    out = a[0] * np.asarray(history[-1])
    for i in range(1, p):
        out = out + a[i] * np.asarray(history[-1 - i])
    return out
