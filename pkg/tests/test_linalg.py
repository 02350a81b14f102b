"""Dense linear algebra kernels: worked examples plus randomized invariants."""

import numpy as np
import pytest

from somd import linalg
from somd.errors import (
    DimensionMismatch,
    NotPositiveDefinite,
    NotSymmetric,
    RankDeficient,
)

from oracles import power_iteration_spectral


# ---------------------------------------------------------------- gaussian_matrix

def test_gaussian_matrix_deterministic():
    a = linalg.gaussian_matrix(7, 5, seed=42)
    b = linalg.gaussian_matrix(7, 5, seed=42)
    assert a.dtype == np.float64
    np.testing.assert_array_equal(a, b)


def test_gaussian_matrix_seed_changes_output():
    a = linalg.gaussian_matrix(7, 5, seed=42)
    c = linalg.gaussian_matrix(7, 5, seed=43)
    assert not np.array_equal(a, c)


def test_gaussian_matrix_moments():
    m = linalg.gaussian_matrix(1000, 1000, seed=3)
    assert abs(m.mean()) < 0.01
    assert abs(m.var() - 1.0) < 0.02


def test_gaussian_matrix_shape():
    assert linalg.gaussian_matrix(3, 2, seed=0).shape == (3, 2)


def test_gaussian_matrix_pure():
    # interleaved unrelated draws must not perturb the stream
    a = linalg.gaussian_matrix(4, 4, seed=9)
    np.random.default_rng(123).normal(size=100)
    np.random.seed(7)
    np.random.normal(size=50)
    b = linalg.gaussian_matrix(4, 4, seed=9)
    np.testing.assert_array_equal(a, b)


def test_derive_seed_deterministic_and_distinct():
    s = [linalg.derive_seed(0, i) for i in range(32)]
    assert s == [linalg.derive_seed(0, i) for i in range(32)]
    assert len(set(s)) == 32
    assert linalg.derive_seed(0, 1, 2) != linalg.derive_seed(0, 2, 1)


# --------------------------------------------------------------------- reduced_qr

def test_reduced_qr_identity():
    q, r = linalg.reduced_qr(np.eye(4))
    np.testing.assert_allclose(q, np.eye(4), atol=1e-14)
    np.testing.assert_allclose(r, np.eye(4), atol=1e-14)


def test_reduced_qr_single_column():
    # Gram-Schmidt by hand: normalize (3,4) -> (0.6,0.8), length 5
    q, r = linalg.reduced_qr(np.array([[3.0], [4.0]]))
    np.testing.assert_allclose(q, np.array([[0.6], [0.8]]), atol=1e-14)
    np.testing.assert_allclose(r, np.array([[5.0]]), atol=1e-14)


def test_reduced_qr_rank_deficient():
    a = np.ones((4, 2))
    with pytest.raises(RankDeficient):
        linalg.reduced_qr(a)


def test_reduced_qr_orthonormal_columns():
    rng = np.random.default_rng(11)
    for _ in range(50):
        rows = rng.integers(2, 12)
        cols = rng.integers(1, rows + 1)
        a = rng.normal(size=(rows, cols))
        q, r = linalg.reduced_qr(a)
        assert q.shape == (rows, cols)
        assert np.max(np.abs(q.T @ q - np.eye(cols))) < 1e-10
        np.testing.assert_allclose(q @ r, a, atol=1e-10)
        assert np.all(np.diag(r) > 0)


# ------------------------------------------------------------------------ sym_eig

def test_sym_eig_diagonal():
    dec = linalg.sym_eig(np.diag([2.0, 5.0]))
    np.testing.assert_allclose(dec.eigenvalues, [2.0, 5.0], atol=1e-14)
    np.testing.assert_allclose(np.abs(dec.eigenvectors), np.eye(2), atol=1e-14)


def test_sym_eig_two_by_two():
    dec = linalg.sym_eig(np.array([[2.0, 1.0], [1.0, 2.0]]))
    np.testing.assert_allclose(dec.eigenvalues, [1.0, 3.0], atol=1e-12)


def test_sym_eig_reconstruction():
    rng = np.random.default_rng(5)
    a = rng.normal(size=(6, 6))
    s = a @ a.T
    dec = linalg.sym_eig(s)
    recon = dec.eigenvectors @ np.diag(dec.eigenvalues) @ dec.eigenvectors.T
    np.testing.assert_allclose(recon, s, atol=1e-8)


def test_sym_eig_rejects_asymmetric():
    with pytest.raises(NotSymmetric):
        linalg.sym_eig(np.array([[1.0, 2.0], [0.0, 1.0]]))


def test_sym_eig_ascending_and_spd_positive():
    rng = np.random.default_rng(17)
    for _ in range(25):
        n = rng.integers(2, 10)
        a = rng.normal(size=(n, n))
        s = a @ a.T + n * np.eye(n)
        dec = linalg.sym_eig(s)
        assert np.all(np.diff(dec.eigenvalues) >= -1e-12)
        assert np.all(dec.eigenvalues > 0)


# ----------------------------------------------------------------------- cholesky

def test_cholesky_identity():
    np.testing.assert_array_equal(linalg.cholesky(np.eye(3)), np.eye(3))


def test_cholesky_worked_example():
    l = linalg.cholesky(np.array([[4.0, 2.0], [2.0, 5.0]]))
    np.testing.assert_allclose(l, np.array([[2.0, 0.0], [1.0, 2.0]]), atol=1e-14)


def test_cholesky_rejects_indefinite():
    with pytest.raises(NotPositiveDefinite):
        linalg.cholesky(np.array([[1.0, 2.0], [2.0, 1.0]]))


def test_cholesky_stack_matches_loop():
    rng = np.random.default_rng(3)
    a = rng.normal(size=(5, 4, 4))
    s = a @ np.swapaxes(a, 1, 2) + 4 * np.eye(4)
    stacked = linalg.cholesky_stack(s)
    for i in range(5):
        np.testing.assert_allclose(stacked[i], linalg.cholesky(s[i]), atol=1e-12)


def test_tri_inv_stack_inverts():
    rng = np.random.default_rng(8)
    a = rng.normal(size=(6, 5, 5))
    s = a @ np.swapaxes(a, 1, 2) + 5 * np.eye(5)
    l = linalg.cholesky_stack(s)
    linv = linalg.tri_inv_stack(l)
    np.testing.assert_allclose(linv @ l, np.broadcast_to(np.eye(5), (6, 5, 5)), atol=1e-10)


# --------------------------------------------------------------------- chol_solve

def test_chol_solve_identity():
    np.testing.assert_array_equal(
        linalg.chol_solve(np.eye(2), np.array([1.0, 2.0])), np.array([1.0, 2.0])
    )


def test_chol_solve_worked_example():
    s = np.array([[4.0, 2.0], [2.0, 5.0]])
    v = np.array([2.0, 7.0])
    x = linalg.chol_solve(linalg.cholesky(s), v)
    np.testing.assert_allclose(s @ x, v, atol=1e-12)
    np.testing.assert_allclose(x, [-0.25, 1.5], atol=1e-12)


def test_chol_solve_zero_vector():
    s = np.array([[4.0, 2.0], [2.0, 5.0]])
    np.testing.assert_array_equal(
        linalg.chol_solve(linalg.cholesky(s), np.zeros(2)), np.zeros(2)
    )


def test_chol_solve_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        linalg.chol_solve(np.eye(3), np.ones(2))


def test_chol_solve_random_systems():
    rng = np.random.default_rng(101)
    for _ in range(1000):
        n = int(rng.integers(1, 33))
        a = rng.normal(size=(n, n))
        s = a @ a.T + n * np.eye(n)
        x_true = rng.normal(size=n)
        v = s @ x_true
        x = linalg.chol_solve(linalg.cholesky(s), v)
        assert np.linalg.norm(x - x_true) <= 1e-9 * max(1.0, np.linalg.norm(x_true))


# ------------------------------------------------------------------- matrix_norms

def test_matrix_norms_identity():
    fro, spec = linalg.matrix_norms(np.eye(3))
    assert fro == pytest.approx(np.sqrt(3.0), abs=1e-14)
    assert spec == pytest.approx(1.0, abs=1e-14)


def test_matrix_norms_diagonal():
    fro, spec = linalg.matrix_norms(np.diag([3.0, -4.0]))
    assert fro == pytest.approx(5.0, abs=1e-14)
    assert spec == pytest.approx(4.0, abs=1e-14)


def test_matrix_norms_vs_power_iteration():
    rng = np.random.default_rng(23)
    m = rng.normal(size=(5, 5))
    _, spec = linalg.matrix_norms(m)
    assert spec == pytest.approx(power_iteration_spectral(m), abs=1e-8)
