"""Truncated t-SVD, tubal rank and the rank / subspace diagnostics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, ValidationError
from .tensor import (
    as_tensor3,
    conj_transpose,
    fft_mode3,
    fourier_slices,
    from_fourier_slices,
    identity_tensor,
    mirror_conjugate,
    self_conjugate_indices,
    t_product,
)

DEFAULT_RANK_TOL = 1e-2


@dataclass(frozen=True)
class TruncatedTSVD:
    """``x ~= u * s * v^H`` with column-orthogonal ``u`` (n1 x r x n3),
    ``v`` (n2 x r x n3) and f-diagonal ``s`` (r x r x n3).

    Factors are unique only up to unitary mixing inside blocks of tied
    singular values; compare reconstructions or subspaces, not entries.
    """

    u: np.ndarray
    s: np.ndarray
    v: np.ndarray

    @property
    def r(self) -> int:
        return self.u.shape[1]

    @property
    def s_hat(self) -> np.ndarray:
        """Fourier-domain core: every slice is real, diagonal and sorted."""
        return fft_mode3(self.s)

    def reconstruct(self) -> np.ndarray:
        return t_product(t_product(self.u, self.s), conj_transpose(self.v))


def _fix_phase(u: np.ndarray, vh: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # make the largest-magnitude entry of each left vector real and >= 0
    idx = np.argmax(np.abs(u), axis=0)
    lead = u[idx, np.arange(u.shape[1])]
    mag = np.abs(lead)
    phase = np.where(mag > 0, lead / np.where(mag > 0, mag, 1), 1)
    return u * np.conj(phase), vh * phase[:, None]


def _slice_svds(stack: np.ndarray, r: int, real_input: bool):
    n3, n1, n2 = stack.shape
    u = np.zeros((n3, n1, r), dtype=np.complex128)
    s = np.zeros((n3, r))
    v = np.zeros((n3, n2, r), dtype=np.complex128)
    todo = range(n3 // 2 + 1) if real_input else range(n3)
    conj_self = self_conjugate_indices(n3) if real_input else ()
    for k in todo:
        m = stack[k].real if k in conj_self else stack[k]
        uk, sk, vhk = np.linalg.svd(m, full_matrices=False)
        uk, vhk = _fix_phase(uk[:, :r], vhk[:r])
        u[k], s[k], v[k] = uk, sk[:r], np.conj(vhk).T
    if real_input:
        mirror_conjugate(u)
        mirror_conjugate(v)
        for k in range(n3 // 2 + 1, n3):
            s[k] = s[n3 - k]
    return u, s, v


def truncated_tsvd(x, r: int) -> TruncatedTSVD:
    """Rank-``r`` truncated t-SVD via per-slice matrix SVDs in the Fourier domain."""
    x = as_tensor3(x)
    n1, n2, n3 = x.shape
    if not 1 <= r <= min(n1, n2):
        raise ValidationError(f"truncation rank r={r} outside [1, {min(n1, n2)}]")
    real = not np.iscomplexobj(x)
    u, s, v = _slice_svds(fourier_slices(x), r, real)
    s_stack = np.zeros((n3, r, r))
    s_stack[:, np.arange(r), np.arange(r)] = s
    return TruncatedTSVD(
        u=from_fourier_slices(u, real=real),
        s=from_fourier_slices(s_stack.astype(np.complex128), real=real),
        v=from_fourier_slices(v, real=real),
    )


def column_orthogonality_residual(u) -> float:
    """``||u^H * u - I||_F / ||I||_F`` for an ``n x r x n3`` tensor."""
    u = as_tensor3(u)
    eye = identity_tensor(u.shape[1], u.shape[2])
    gram = t_product(conj_transpose(u), u)
    return float(np.linalg.norm((gram - eye).ravel()) / np.linalg.norm(eye.ravel()))


def tubal_rank(x, rel_tol: float = DEFAULT_RANK_TOL) -> int:
    """Largest per-slice count of Fourier singular values at or above
    ``rel_tol`` times the largest singular value over all slices."""
    if not 0 < rel_tol < 1:
        raise ValidationError("rel_tol must lie in (0, 1)")
    sv = np.linalg.svd(fourier_slices(x), compute_uv=False)
    top = sv.max()
    if top == 0:
        return 0
    return int((sv >= rel_tol * top).sum(axis=1).max())


def unfold(x, mode: int) -> np.ndarray:
    """Mode-``mode`` matricization (0-based); mode fibers become columns."""
    x = as_tensor3(x)
    return np.reshape(np.moveaxis(x, mode, 0), (x.shape[mode], -1), order="F")


def matrix_rank_rel(m: np.ndarray, rel_tol: float = DEFAULT_RANK_TOL) -> int:
    sv = np.linalg.svd(m, compute_uv=False)
    if sv.size == 0 or sv[0] == 0:
        return 0
    return int((sv >= rel_tol * sv[0]).sum())


def tucker_ranks(x, rel_tol: float = DEFAULT_RANK_TOL) -> tuple[int, int, int]:
    return tuple(matrix_rank_rel(unfold(x, mode), rel_tol) for mode in range(3))


def avg_tucker_rank(x, rel_tol: float = DEFAULT_RANK_TOL) -> float:
    return sum(tucker_ranks(x, rel_tol)) / 3


def left_factor(x, rank: int | None = None, rel_tol: float | None = DEFAULT_RANK_TOL) -> np.ndarray:
    """Left factor of the truncated t-SVD of ``x``.

    Columns whose Fourier singular value falls below ``rel_tol`` times the
    global largest are set to zero (``rel_tol=None`` keeps all ``rank``).
    """
    x = as_tensor3(x)
    n1, n2, n3 = x.shape
    rank = min(n1, n2) if rank is None else rank
    if not 1 <= rank <= min(n1, n2):
        raise ValidationError(f"rank={rank} outside [1, {min(n1, n2)}]")
    real = not np.iscomplexobj(x)
    u, s, _ = _slice_svds(fourier_slices(x), rank, real)
    if rel_tol is not None and s.max() > 0:
        u = u * (s >= rel_tol * s.max())[:, None, :]
    return from_fourier_slices(u, real=real)


def subspace_residual(u1, ut, n2: int | None = None) -> float:
    """Normalized Procrustes distance ``min_T ||u1 - ut * T||_F``.

    The minimum over column-orthogonal ``T`` decouples into one orthogonal
    Procrustes problem per Fourier slice. The result is scaled by
    ``1 / sqrt(2 min(n1, n2))``; ``n2`` defaults to the column count of ``u1``.
    """
    u1 = as_tensor3(u1, "u1")
    ut = as_tensor3(ut, "ut")
    if u1.shape != ut.shape:
        raise DimensionError(f"factor shapes differ: {u1.shape} vs {ut.shape}")
    n1, _, n3 = u1.shape
    a1 = fourier_slices(u1)
    at = fourier_slices(ut)
    l, _, rh = np.linalg.svd(np.conj(at).transpose(0, 2, 1) @ a1)
    theta = l @ rh
    gap = np.linalg.norm((a1 - at @ theta).ravel()) / np.sqrt(n3)
    n2 = u1.shape[1] if n2 is None else n2
    return float(gap / np.sqrt(2 * min(n1, n2)))
