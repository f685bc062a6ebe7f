"""Third-order tensor algebra under the t-product.

Tensors are plain numpy arrays of shape ``(n1, n2, n3)``; a real dtype marks a
real tensor. Transforms follow the ``fft(x, [], 3)`` / ``ifft(x, [], 3)``
conventions: unnormalized forward DFT along the third axis, ``1/n3`` on the
inverse.

Algorithms that work slice by slice in the Fourier domain use *stacks* of
shape ``(n3, n1, n2)`` instead, so every frontal slice is one contiguous
matrix; :func:`fourier_slices` and :func:`from_fourier_slices` convert.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, SymmetryError

REAL_RESIDUE_TOL = 1e-8


def as_tensor3(x, name: str = "x") -> np.ndarray:
    x = np.asarray(x)
    if x.ndim != 3:
        raise DimensionError(f"{name} must be a third-order tensor, got ndim={x.ndim}")
    if min(x.shape) < 1:
        raise DimensionError(f"{name} has an empty dimension: {x.shape}")
    if not (np.issubdtype(x.dtype, np.floating) or np.issubdtype(x.dtype, np.complexfloating)):
        x = x.astype(np.float64)
    return x


def ensure_real(x: np.ndarray, tol: float = REAL_RESIDUE_TOL) -> np.ndarray:
    """Drop the imaginary part of ``x`` after checking it is negligible.

    Raises :class:`SymmetryError` when ``||imag(x)|| / ||x|| >= tol``; a large
    residue means conjugate symmetry was broken upstream.
    """
    if not np.iscomplexobj(x):
        return x
    imag = np.linalg.norm(x.imag.ravel())
    total = np.linalg.norm(x.ravel())
    if imag > tol * total:
        raise SymmetryError(f"relative imaginary residue {imag / total:.3e} exceeds {tol:g}")
    return np.ascontiguousarray(x.real)


def fft_mode3(x) -> np.ndarray:
    """DFT of every tube ``x[i, j, :]``; any length ``n3`` is supported."""
    return np.fft.fft(as_tensor3(x), axis=2)


def ifft_mode3(xh, real: bool = False) -> np.ndarray:
    """Inverse of :func:`fft_mode3`. With ``real=True`` the result is checked
    and returned as a real array."""
    x = np.fft.ifft(as_tensor3(xh, "xh"), axis=2)
    return ensure_real(x) if real else x


def fourier_slices(x) -> np.ndarray:
    """Fourier-domain frontal slices as a contiguous ``(n3, n1, n2)`` stack."""
    return np.ascontiguousarray(np.moveaxis(fft_mode3(x), 2, 0))


def from_fourier_slices(stack: np.ndarray, real: bool = False) -> np.ndarray:
    """Inverse of :func:`fourier_slices`; ``stack`` may carry leading batch axes."""
    x = np.fft.ifft(np.moveaxis(stack, -3, -1), axis=-1)
    return ensure_real(x) if real else x


def self_conjugate_indices(n3: int) -> tuple[int, ...]:
    """Fourier slices that equal their own conjugate partner for real input."""
    return (0, n3 // 2) if n3 % 2 == 0 and n3 > 1 else (0,)


def mirror_conjugate(stack: np.ndarray) -> np.ndarray:
    """Impose the conjugate symmetry of a real tensor on a Fourier stack.

    Slices ``k > n3/2`` are overwritten with ``conj(stack[n3 - k])`` and the
    self-conjugate slices are made real, so the inverse transform is exactly
    real. The Fourier axis is ``-3``; the stack is modified in place.
    """
    n3 = stack.shape[-3]
    for k in range(n3 // 2 + 1, n3):
        stack[..., k, :, :] = np.conj(stack[..., n3 - k, :, :])
    for k in self_conjugate_indices(n3):
        stack[..., k, :, :] = stack[..., k, :, :].real
    return stack


def map_half_spectrum(fn, stack: np.ndarray, out_shape: tuple[int, ...]) -> np.ndarray:
    """Apply a per-slice matrix function to the independent half of a
    conjugate-symmetric stack ``(n3, m, n)`` and mirror the rest.

    ``fn`` receives a real matrix for self-conjugate slices, so real inputs
    give real outputs there; the mirrored output is conjugate-symmetric.
    """
    n3 = stack.shape[0]
    out = np.empty((n3,) + out_shape, dtype=np.complex128)
    conj_self = self_conjugate_indices(n3)
    for k in range(n3 // 2 + 1):
        out[k] = fn(stack[k].real) if k in conj_self else fn(stack[k])
    return mirror_conjugate(out)


def _check_conformable(x: np.ndarray, y: np.ndarray) -> None:
    if x.shape[2] != y.shape[2]:
        raise DimensionError(f"third dimension (n3) mismatch: {x.shape[2]} vs {y.shape[2]}")
    if x.shape[1] != y.shape[0]:
        raise DimensionError(f"inner dimension mismatch: x has n2={x.shape[1]}, y has {y.shape[0]} rows")


def t_product(x, y) -> np.ndarray:
    """t-product ``x * y`` of an ``n1 x n2 x n3`` and an ``n2 x n4 x n3`` tensor.

    Computed as slice-wise matrix products in the Fourier domain. The result is
    real when both operands are real.
    """
    x = as_tensor3(x, "x")
    y = as_tensor3(y, "y")
    _check_conformable(x, y)
    zh = fourier_slices(x) @ fourier_slices(y)
    real = not (np.iscomplexobj(x) or np.iscomplexobj(y))
    return from_fourier_slices(zh, real=real)


def bcirc(x) -> np.ndarray:
    """Block-circulant matrix of size ``(n1*n3, n2*n3)``; block (i, j) is
    frontal slice ``(i - j) mod n3``."""
    x = as_tensor3(x)
    n1, n2, n3 = x.shape
    out = np.zeros((n1 * n3, n2 * n3), dtype=x.dtype)
    for i in range(n3):
        for j in range(n3):
            out[i * n1:(i + 1) * n1, j * n2:(j + 1) * n2] = x[:, :, (i - j) % n3]
    return out


def bvec(x) -> np.ndarray:
    x = as_tensor3(x)
    return np.concatenate([x[:, :, k] for k in range(x.shape[2])], axis=0)


def bvfold(m: np.ndarray, n3: int) -> np.ndarray:
    rows = m.shape[0] // n3
    return np.stack([m[k * rows:(k + 1) * rows] for k in range(n3)], axis=2)


def bcirc_oracle(x, y) -> np.ndarray:
    """Reference t-product ``bvfold(bcirc(x) @ bvec(y))``; quadratic in n3,
    intended for tests."""
    x = as_tensor3(x, "x")
    y = as_tensor3(y, "y")
    _check_conformable(x, y)
    return bvfold(bcirc(x) @ bvec(y), x.shape[2])


def conj_transpose(x) -> np.ndarray:
    """Conjugate-transpose every frontal slice and reverse slices 2..n3."""
    x = as_tensor3(x)
    xt = np.conj(x).transpose(1, 0, 2)
    order = [0] + list(range(x.shape[2] - 1, 0, -1))
    return np.ascontiguousarray(xt[:, :, order])


def fro_norm(x) -> float:
    return float(np.linalg.norm(np.asarray(x).ravel()))


def identity_tensor(n: int, n3: int) -> np.ndarray:
    if n < 1 or n3 < 1:
        raise DimensionError(f"identity_tensor needs n, n3 >= 1, got {n}, {n3}")
    out = np.zeros((n, n, n3))
    out[:, :, 0] = np.eye(n)
    return out
