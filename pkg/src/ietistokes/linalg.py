"""Direct solvers for the patch-local and primal systems, and the tridiagonal
eigenvalue problem used for condition estimates."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Union

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import FloatArray
from .errors import DimensionMismatchError, SingularMatrixError

logger = logging.getLogger(__name__)


class MatrixKind(Enum):
    SPD = "spd"
    INDEFINITE = "indefinite"


@dataclass(frozen=True)
class Factorization:
    """Reusable sparse LU factors; solves only read the factors."""

    kind: MatrixKind
    lu: spla.SuperLU
    size: int

    def solve(self, b: FloatArray) -> FloatArray:
        b = np.asarray(b, dtype=float)
        if b.shape[0] != self.size:
            raise DimensionMismatchError(
                f"right-hand side has {b.shape[0]} rows, matrix has {self.size}"
            )
        if b.ndim == 2 and b.shape[1] == 0:
            return np.zeros_like(b)
        return self.lu.solve(b)


def factorize(A: sp.spmatrix, kind: MatrixKind = MatrixKind.INDEFINITE) -> Factorization:
    """Sparse LU with a fill-reducing ordering.

    The SPD kind uses the symmetric mode of SuperLU (diagonal pivots, symmetric
    ordering), which amounts to a Cholesky-type factorization.
    """
    if A.shape[0] != A.shape[1]:
        raise DimensionMismatchError(f"matrix must be square, got {A.shape}")
    csc = sp.csc_matrix(A)
    try:
        if kind is MatrixKind.SPD:
            lu = spla.splu(
                csc,
                permc_spec="MMD_AT_PLUS_A",
                diag_pivot_thresh=0.0,
                options={"SymmetricMode": True},
            )
        else:
            lu = spla.splu(csc, permc_spec="COLAMD")
    except RuntimeError as e:
        raise SingularMatrixError(
            f"factorization of {A.shape[0]}x{A.shape[0]} matrix failed: {e}"
        )
    pivots = np.abs(lu.U.diagonal())
    if not np.all(np.isfinite(pivots)) or pivots.min(initial=np.inf) == 0.0:
        raise SingularMatrixError(f"zero pivot at position {int(np.argmin(pivots))}")
    logger.debug(
        "factorized %s matrix of size %d, nnz(L+U) = %d",
        kind.value,
        csc.shape[0],
        lu.L.nnz + lu.U.nnz,
    )
    return Factorization(kind, lu, csc.shape[0])


@dataclass(frozen=True)
class DenseFactorization:
    lu: tuple[FloatArray, FloatArray]
    size: int

    def solve(self, b: FloatArray) -> FloatArray:
        b = np.asarray(b, dtype=float)
        if b.shape[0] != self.size:
            raise DimensionMismatchError(
                f"right-hand side has {b.shape[0]} rows, matrix has {self.size}"
            )
        if self.size == 0:
            return np.zeros_like(b)
        return scipy.linalg.lu_solve(self.lu, b)


def factorize_dense(A: FloatArray, rtol: float = 1e-13) -> DenseFactorization:
    """Dense LU with partial pivoting; pivots below rtol * max pivot count as zero."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionMismatchError(f"matrix must be square, got {A.shape}")
    if A.shape[0] == 0:
        return DenseFactorization((A, np.zeros(0, dtype=np.int32)), 0)
    lu, piv = scipy.linalg.lu_factor(A, check_finite=True)
    pivots = np.abs(np.diag(lu))
    if pivots.min() <= rtol * pivots.max():
        raise SingularMatrixError(f"zero pivot at position {int(np.argmin(pivots))}")
    return DenseFactorization((lu, piv), A.shape[0])


AnyFactorization = Union[Factorization, DenseFactorization]


def solve(F: AnyFactorization, b: FloatArray) -> FloatArray:
    return F.solve(b)


def tridiag_eigenvalues(alpha: FloatArray, beta: FloatArray) -> FloatArray:
    """Ascending eigenvalues of the symmetric tridiagonal matrix (alpha; beta)."""
    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float)
    if alpha.size == 1:
        return alpha.copy()
    return scipy.linalg.eigh_tridiagonal(alpha, beta, eigvals_only=True)
