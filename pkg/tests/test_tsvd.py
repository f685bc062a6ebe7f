import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lotap.data import SynConfig, generate_syn
from lotap.errors import DimensionError, ValidationError
from lotap.tensor import fourier_slices, from_fourier_slices, identity_tensor, t_product, conj_transpose
from lotap.tsvd import (
    avg_tucker_rank,
    column_orthogonality_residual,
    left_factor,
    subspace_residual,
    truncated_tsvd,
    tubal_rank,
    tucker_ranks,
    unfold,
)


def rel(a, b):
    return np.linalg.norm((a - b).ravel()) / np.linalg.norm(b.ravel())


def low_tubal_rank(rng, n1, n2, n3, r):
    return t_product(rng.standard_normal((n1, r, n3)), rng.standard_normal((r, n2, n3)))


def random_column_orthogonal(rng, n, r, n3):
    stack = fourier_slices(rng.standard_normal((n, r, n3)))
    q = np.stack([np.linalg.qr(m)[0] for m in stack])
    return q  # Fourier stack; complex column-orthogonal slices


def test_tubal_rank_two_reconstruction():
    x = low_tubal_rank(np.random.default_rng(0), 6, 5, 4, 2)
    d = truncated_tsvd(x, 2)
    assert rel(d.reconstruct(), x) < 1e-8
    assert d.u.shape == (6, 2, 4) and d.s.shape == (2, 2, 4) and d.v.shape == (5, 2, 4)
    assert d.u.dtype == np.float64


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 7), st.integers(1, 7), st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_full_rank_is_exact(n1, n2, n3, seed):
    x = np.random.default_rng(seed).standard_normal((n1, n2, n3))
    d = truncated_tsvd(x, min(n1, n2))
    assert rel(d.reconstruct(), x) < 1e-8
    assert column_orthogonality_residual(d.u) < 1e-8
    assert column_orthogonality_residual(d.v) < 1e-8


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 7), st.integers(2, 7), st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_fourier_core_is_sorted_nonnegative_diagonal(n1, n2, n3, seed):
    x = np.random.default_rng(seed).standard_normal((n1, n2, n3))
    sh = fourier_slices(truncated_tsvd(x, min(n1, n2)).s)
    off = sh - sh * np.eye(sh.shape[-1])
    assert np.max(np.abs(off)) < 1e-12
    diag = np.diagonal(sh, axis1=1, axis2=2)
    assert np.max(np.abs(diag.imag)) < 1e-12
    assert np.all(diag.real >= -1e-12)
    assert np.all(np.diff(diag.real, axis=1) <= 1e-12)


def test_single_slice_matches_matrix_svd():
    m = np.random.default_rng(1).standard_normal((5, 4))
    d = truncated_tsvd(m[:, :, None], 2)
    sv = np.linalg.svd(m, compute_uv=False)
    assert np.allclose(np.diagonal(d.s[..., 0]), sv[:2], atol=1e-10)
    # truncation error equals the tail singular energy
    err = np.linalg.norm(d.reconstruct()[..., 0] - m) ** 2
    assert err == pytest.approx(np.sum(sv[2:] ** 2), rel=1e-9)


def test_complex_input():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((4, 3, 5)) + 1j * rng.standard_normal((4, 3, 5))
    d = truncated_tsvd(x, 3)
    assert rel(d.reconstruct(), x) < 1e-8
    assert column_orthogonality_residual(d.u) < 1e-8


def test_rank_out_of_range():
    x = np.ones((3, 4, 2))
    for r in (0, 4):
        with pytest.raises(ValidationError):
            truncated_tsvd(x, r)


# -- rank diagnostics -------------------------------------------------------------

def test_tubal_rank_examples():
    assert tubal_rank(np.zeros((3, 3, 4))) == 0
    assert tubal_rank(identity_tensor(3, 4)) == 3
    with pytest.raises(ValidationError):
        tubal_rank(np.ones((2, 2, 2)), rel_tol=1.5)


def test_tubal_rank_of_noiseless_syn():
    series, _ = generate_syn(SynConfig(n1=20, n2=20, n3=6, T=5, rho=0.0))
    assert [tubal_rank(x) for x in series] == [4] * 5


def test_unfolding_puts_fibers_in_columns():
    x = np.arange(24, dtype=float).reshape(2, 3, 4)
    assert unfold(x, 0).shape == (2, 12)
    assert np.array_equal(unfold(x, 0)[:, 0], x[:, 0, 0])
    assert np.array_equal(unfold(x, 1)[:, 0], x[0, :, 0])
    assert np.array_equal(unfold(x, 2)[:, 0], x[0, 0, :])


def test_identity_tucker_ranks():
    assert tucker_ranks(identity_tensor(3, 4)) == (3, 3, 1)
    assert avg_tucker_rank(identity_tensor(3, 4)) == pytest.approx(7 / 3)
    assert avg_tucker_rank(np.zeros((2, 2, 2))) == 0


def tucker_tensor(rng, dims, ranks):
    core = rng.standard_normal(ranks)
    factors = [rng.standard_normal((n, r)) for n, r in zip(dims, ranks)]
    return np.einsum("abc,ia,jb,kc->ijk", core, *factors)


@settings(max_examples=50, deadline=None)
@given(st.tuples(st.integers(1, 4), st.integers(1, 4), st.integers(1, 4)), st.integers(0, 2**32 - 1))
def test_tubal_rank_bounded_by_unfolding_ranks(ranks, seed):
    x = tucker_tensor(np.random.default_rng(seed), (8, 7, 6), ranks)
    r1, r2, _ = tucker_ranks(x)
    assert tubal_rank(x) <= min(r1, r2)


# -- subspace residual ------------------------------------------------------------

def test_residual_of_identical_factors():
    u = from_fourier_slices(random_column_orthogonal(np.random.default_rng(3), 6, 2, 4), real=False)
    assert subspace_residual(u, u) < 1e-10


def test_residual_invariant_to_rotation():
    rng = np.random.default_rng(4)
    u = truncated_tsvd(rng.standard_normal((6, 5, 4)), 3).u
    theta = truncated_tsvd(rng.standard_normal((3, 3, 4)), 3).u
    assert subspace_residual(u, t_product(u, theta)) < 1e-8
    assert subspace_residual(t_product(u, theta), u) < 1e-8


def test_residual_invariant_to_right_multiplication_of_both():
    rng = np.random.default_rng(5)
    u1 = truncated_tsvd(rng.standard_normal((6, 5, 4)), 2).u
    ut = truncated_tsvd(rng.standard_normal((6, 5, 4)), 2).u
    q = truncated_tsvd(rng.standard_normal((2, 2, 4)), 2).u
    base = subspace_residual(u1, ut)
    assert subspace_residual(u1, t_product(ut, q)) == pytest.approx(base, abs=1e-8)


def test_residual_orthogonal_columns_matches_grid_search():
    # 2x1x1: u1 = e1, ut = e2; theta is a scalar of unit modulus (here +-1)
    u1 = np.array([[[1.0]], [[0.0]]])
    ut = np.array([[[0.0]], [[1.0]]])
    grid = np.linspace(-1, 1, 2001)
    brute = min(np.linalg.norm(u1[:, 0, 0] - ut[:, 0, 0] * g) for g in grid if abs(abs(g) - 1) < 1e-12)
    assert subspace_residual(u1, ut, n2=1) == pytest.approx(brute / np.sqrt(2), abs=1e-12)
    assert subspace_residual(u1, ut, n2=1) == pytest.approx(1.0)


def test_residual_is_the_procrustes_minimum():
    rng = np.random.default_rng(6)
    u1 = truncated_tsvd(rng.standard_normal((5, 4, 1)), 2).u[..., 0]
    ut = truncated_tsvd(rng.standard_normal((5, 4, 1)), 2).u[..., 0]
    best = min(
        np.linalg.norm(u1 - ut @ np.array([[np.cos(a), -s * np.sin(a)], [np.sin(a), s * np.cos(a)]]))
        for a in np.linspace(0, 2 * np.pi, 4001)
        for s in (1, -1)
    )
    got = subspace_residual(u1[:, :, None], ut[:, :, None]) * np.sqrt(2 * 2)
    assert got == pytest.approx(best, abs=1e-5)
    assert got <= best + 1e-12


def test_residual_shape_mismatch():
    with pytest.raises(DimensionError):
        subspace_residual(np.ones((3, 2, 2)), np.ones((3, 1, 2)))


def test_left_factor_zeroes_weak_columns():
    rng = np.random.default_rng(7)
    x = low_tubal_rank(rng, 6, 6, 4, 2)
    u = left_factor(x, rank=4)
    uh = fourier_slices(u)
    assert np.allclose(uh[:, :, 2:], 0)
    assert subspace_residual(u, u) < 1e-10
    # unthresholded factor keeps full columns
    assert column_orthogonality_residual(left_factor(x, rank=2, rel_tol=None)) < 1e-8


def test_hermitian_helpers_agree():
    rng = np.random.default_rng(8)
    u = truncated_tsvd(rng.standard_normal((5, 3, 4)), 3).u
    gram = t_product(conj_transpose(u), u)
    assert np.allclose(gram, identity_tensor(3, 4), atol=1e-12)
