import numpy as np
import pytest
import scipy.sparse as sp

from src.ietistokes.errors import DimensionMismatchError, SingularMatrixError
from src.ietistokes.linalg import (
    MatrixKind,
    factorize,
    factorize_dense,
    solve,
    tridiag_eigenvalues,
)


def random_spd(n, seed=0):
    rng = np.random.default_rng(seed)
    A = sp.random(n, n, density=0.1, random_state=rng)
    return (A.T @ A + sp.identity(n)).tocsr()


def test_identity():
    F = factorize(sp.identity(5, format="csr"), MatrixKind.SPD)
    b = np.arange(5.0)
    assert np.allclose(solve(F, b), b)


def test_saddle_point():
    A = sp.csr_matrix(np.array([[1.0, 1.0], [1.0, 0.0]]))
    x = factorize(A, MatrixKind.INDEFINITE).solve(np.array([2.0, 1.0]))
    assert np.allclose(x, [1.0, 1.0])


def test_spd_residual():
    A = random_spd(50)
    b = np.random.default_rng(1).normal(size=50)
    x = factorize(A, MatrixKind.SPD).solve(b)
    assert np.linalg.norm(A @ x - b) <= 1e-10 * np.linalg.norm(b)


def test_multiple_right_hand_sides():
    A = random_spd(20, seed=2)
    F = factorize(A)
    B = np.eye(20)
    X = F.solve(B)
    assert np.allclose(A @ X, B, atol=1e-10)
    assert F.solve(np.zeros((20, 0))).shape == (20, 0)


def test_zero_rhs_and_repeatability():
    A = random_spd(30, seed=3)
    F = factorize(A)
    assert not F.solve(np.zeros(30)).any()
    b = np.linspace(-1, 1, 30)
    assert np.array_equal(F.solve(b), F.solve(b))


def test_singular():
    A = sp.csr_matrix(np.array([[1.0, 1.0], [1.0, 1.0]]))
    with pytest.raises(SingularMatrixError):
        factorize(A)
    with pytest.raises(SingularMatrixError):
        factorize_dense(A.toarray())


def test_dimension_mismatch():
    F = factorize(sp.identity(4, format="csr"))
    with pytest.raises(DimensionMismatchError):
        F.solve(np.ones(3))
    with pytest.raises(DimensionMismatchError):
        factorize(sp.csr_matrix((3, 4)))
    with pytest.raises(DimensionMismatchError):
        factorize_dense(np.eye(3)).solve(np.ones(2))


def test_dense_factorization():
    A = np.array([[0.0, 2.0], [3.0, 1.0]])
    x = factorize_dense(A).solve(np.array([4.0, 5.0]))
    assert np.allclose(A @ x, [4.0, 5.0])
    assert factorize_dense(np.zeros((0, 0))).solve(np.zeros(0)).size == 0


def test_tridiagonal_eigenvalues():
    eigs = tridiag_eigenvalues(np.full(3, 2.0), np.full(2, -1.0))
    assert np.allclose(eigs, [2 - np.sqrt(2), 2.0, 2 + np.sqrt(2)])
    assert np.allclose(tridiag_eigenvalues(np.array([3.5]), np.zeros(0)), [3.5])


def test_tridiagonal_against_dense():
    rng = np.random.default_rng(4)
    alpha, beta = rng.normal(size=10), rng.normal(size=9)
    T = np.diag(alpha) + np.diag(beta, 1) + np.diag(beta, -1)
    assert np.allclose(tridiag_eigenvalues(alpha, beta), np.linalg.eigvalsh(T))
