"""IETI-DP for the Stokes system: local saddle point problems with primal
constraints, the primal problem, the dual Schur operator, scaled Dirichlet
preconditioners and preconditioned conjugate gradients.

Local unknowns of patch k are ordered x = (u_Gamma, u_I, p) followed by the
multipliers (mu_p, mu_v) of the primal constraints.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import Executor, ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence, TypeVar

import numpy as np
import scipy.sparse as sp

from . import FloatArray, IntArray
from .coupling import JumpOperator, PrimalConstraints
from .discretization import LocalStokesSystem
from .errors import ConfigurationError, SingularMatrixError
from .linalg import (
    DenseFactorization,
    Factorization,
    MatrixKind,
    factorize,
    factorize_dense,
    tridiag_eigenvalues,
)

logger = logging.getLogger(__name__)

PRECONDITIONERS = ("sd1", "sd2")

T = TypeVar("T")


def worker_pool(threads: int) -> Executor | None:
    """A pool for patch loops, None when running serially."""
    if threads <= 1:
        return None
    return ThreadPoolExecutor(max_workers=threads)


def patch_map(fn: Callable[[int], T], count: int, pool: Executor | None = None) -> list[T]:
    """fn(0), ..., fn(count-1), in patch order."""
    if pool is None or count <= 1:
        return [fn(k) for k in range(count)]
    return list(pool.map(fn, range(count)))


def ordered_sum(parts: Sequence[FloatArray], size: int) -> FloatArray:
    total = np.zeros(size)
    for part in parts:
        total += part
    return total


@dataclass(frozen=True)
class AugmentedLocalSystem:
    index: int
    system: LocalStokesSystem
    A: sp.csr_matrix
    C: sp.csr_matrix
    factor: Factorization
    rhs: FloatArray

    @property
    def n_gamma(self) -> int:
        return self.system.gamma.size

    @property
    def n_interior(self) -> int:
        return self.system.interior.size

    @property
    def n_x(self) -> int:
        return self.A.shape[0]

    @property
    def n_constraints(self) -> int:
        return self.C.shape[0]

    @property
    def pressure_slice(self) -> slice:
        return slice(self.n_gamma + self.n_interior, self.n_x)

    def solve(self, b: FloatArray) -> FloatArray:
        return self.factor.solve(b)

    def expand(self, x: FloatArray) -> tuple[FloatArray, FloatArray]:
        """Full velocity and pressure coefficient vectors from x = (u_Gamma, u_I, p)."""
        space = self.system.space
        u = np.zeros(space.n_velocity)
        u[space.gamma] = x[: self.n_gamma]
        u[space.interior] = x[self.n_gamma : self.n_gamma + self.n_interior]
        return u, x[self.pressure_slice].copy()


def local_blocks(system: LocalStokesSystem) -> tuple[sp.csr_matrix, FloatArray]:
    """A^(k) and b^(k) in the (u_Gamma, u_I, p) ordering."""
    vel = np.concatenate((system.gamma, system.interior))
    K = system.K[vel][:, vel]
    D = system.D[:, vel]
    A = sp.bmat([[K, D.T], [D, None]], format="csr")
    return A, np.concatenate((system.f[vel], system.g))


def constraint_matrix(
    system: LocalStokesSystem, C_v: sp.csr_matrix, C_p: FloatArray
) -> sp.csr_matrix:
    """C^(k): the pressure average row followed by the velocity rows."""
    n_gamma, n_interior = system.gamma.size, system.interior.size
    n_p = system.space.n_pressure
    m = C_v.shape[0]
    top = sp.hstack(
        (sp.csr_matrix((1, n_gamma + n_interior)), sp.csr_matrix(C_p.reshape(1, -1)))
    )
    if m == 0:
        return top.tocsr()
    bottom = sp.hstack((C_v, sp.csr_matrix((m, n_interior + n_p))))
    return sp.vstack((top, bottom), format="csr")


def build_augmented_systems(
    systems: Sequence[LocalStokesSystem],
    primal: PrimalConstraints,
    pool: Executor | None = None,
) -> list[AugmentedLocalSystem]:
    def build(k: int) -> AugmentedLocalSystem:
        system = systems[k]
        A, b = local_blocks(system)
        C = constraint_matrix(system, primal.C_v[k], primal.C_p[k])
        augmented = sp.bmat([[A, C.T], [C, None]], format="csc")
        try:
            factor = factorize(augmented, MatrixKind.INDEFINITE)
        except SingularMatrixError as e:
            raise SingularMatrixError(
                f"local system of patch {k} is singular, primal constraints are insufficient ({e})"
            )
        rhs = np.concatenate((b, np.zeros(C.shape[0])))
        return AugmentedLocalSystem(k, system, A, C, factor, rhs)

    return patch_map(build, len(systems), pool)


def _targets(R_C: sp.csr_matrix) -> IntArray:
    return sp.csr_matrix(R_C).indices.astype(np.int64)


def compute_primal_basis(aug: AugmentedLocalSystem) -> FloatArray:
    """Primal basis in local numbering: columns solve A psi + C^T m = 0, C psi = e_j.

    Psi^(k) is this n_x x n_local matrix times R_C^(k), see PrimalSystem.psi_global.
    """
    n_c = aug.n_constraints
    if n_c == 0:
        return np.zeros((aug.n_x, 0))
    rhs = np.zeros((aug.n_x + n_c, n_c))
    rhs[aug.n_x :] = np.eye(n_c)
    return aug.solve(rhs)[: aug.n_x]


@dataclass(frozen=True)
class PrimalSystem:
    psi: tuple[FloatArray, ...]
    targets: tuple[IntArray, ...]
    A_pi: FloatArray
    B_pi: FloatArray
    b_pi: FloatArray
    mean_row: FloatArray
    factor: DenseFactorization

    @property
    def n_primal(self) -> int:
        return self.A_pi.shape[0]

    def psi_global(self, k: int) -> FloatArray:
        """Psi^(k) as a dense n_x x n_primal matrix."""
        out = np.zeros((self.psi[k].shape[0], self.n_primal))
        out[:, self.targets[k]] = self.psi[k]
        return out

    def solve(self, b: FloatArray) -> FloatArray:
        """Solve with the extended matrix; b and the result include the mean row."""
        return self.factor.solve(b)


def build_primal_system(
    augmented: Sequence[AugmentedLocalSystem],
    primal: PrimalConstraints,
    jump: JumpOperator,
    pool: Executor | None = None,
) -> PrimalSystem:
    n = primal.n_primal
    psi = patch_map(
        lambda k: compute_primal_basis(augmented[k]), len(augmented), pool
    )
    targets = [_targets(r) for r in primal.R_C]

    A_pi = np.zeros((n, n))
    B_pi = np.zeros((jump.n_multipliers, n))
    b_pi = np.zeros(n)
    for k, aug in enumerate(augmented):
        t = targets[k]
        A_pi[np.ix_(t, t)] += psi[k].T @ (aug.A @ psi[k])
        B_pi[:, t] += jump.blocks[k] @ psi[k][: aug.n_gamma]
        b_pi[t] += psi[k].T @ aug.rhs[: aug.n_x]
    A_pi = (A_pi + A_pi.T) / 2

    mean_row = np.zeros(n)
    mean_row[list(primal.pressure_primal)] = 1.0
    extended = np.block([[A_pi, mean_row[:, None]], [mean_row[None, :], np.zeros((1, 1))]])
    try:
        factor = factorize_dense(extended)
    except SingularMatrixError as e:
        raise ConfigurationError(f"primal system is singular: {e}")
    logger.debug("primal system of size %d (+1 mean constraint)", n)
    return PrimalSystem(tuple(psi), tuple(targets), A_pi, B_pi, b_pi, mean_row, factor)


@dataclass
class SchurOperator:
    """F = B_Pi A_Pi^-1 B_Pi^T + sum_k B^(k) (A^(k))^-1 B^(k)^T, applied matrix-free."""

    augmented: list[AugmentedLocalSystem]
    primal: PrimalSystem
    jump: JumpOperator
    pool: Executor | None = None

    @property
    def size(self) -> int:
        return self.jump.n_multipliers

    def _local(self, k: int, lam: FloatArray) -> FloatArray:
        aug = self.augmented[k]
        B = self.jump.blocks[k]
        rhs = np.zeros(aug.n_x + aug.n_constraints)
        rhs[: aug.n_gamma] = B.T @ lam
        return B @ aug.solve(rhs)[: aug.n_gamma]

    def _primal(self, rhs: FloatArray) -> FloatArray:
        return self.primal.B_pi @ self.primal.solve(rhs)[: self.primal.n_primal]

    def apply(self, lam: FloatArray) -> FloatArray:
        parts = patch_map(lambda k: self._local(k, lam), len(self.augmented), self.pool)
        extended = np.concatenate((self.primal.B_pi.T @ lam, np.zeros(1)))
        return ordered_sum([self._primal(extended), *parts], self.size)

    __call__ = apply

    def rhs(self) -> FloatArray:
        def local(k: int) -> FloatArray:
            aug = self.augmented[k]
            return self.jump.blocks[k] @ aug.solve(aug.rhs)[: aug.n_gamma]

        parts = patch_map(local, len(self.augmented), self.pool)
        extended = np.concatenate((self.primal.b_pi, np.zeros(1)))
        return ordered_sum([self._primal(extended), *parts], self.size)


def apply_schur(F: SchurOperator, lam: FloatArray) -> FloatArray:
    return F.apply(lam)


@dataclass(frozen=True)
class LocalSchur:
    """Action of a patch Schur complement on u_Gamma: S r = K_GG r - T^T X^-1 T r."""

    K_gg: sp.csr_matrix
    coupling: sp.csr_matrix
    interior: Factorization

    def apply(self, r: FloatArray) -> FloatArray:
        return self.K_gg @ r - self.coupling.T @ self.interior.solve(self.coupling @ r)


def local_schur(system: LocalStokesSystem, C_p: FloatArray, variant: str) -> LocalSchur:
    """sd1: interior Stokes block with the pressure average; sd2: interior Laplacian."""
    gamma, interior = system.gamma, system.interior
    K_gg = system.K[gamma][:, gamma]
    K_ig = system.K[interior][:, gamma]
    K_ii = system.K[interior][:, interior]
    if variant == "sd2":
        return LocalSchur(K_gg.tocsr(), K_ig.tocsr(), factorize(K_ii, MatrixKind.SPD))

    D_g = system.D[:, gamma]
    D_i = system.D[:, interior]
    block = sp.bmat(
        [
            [K_ii, D_i.T, None],
            [D_i, None, sp.csr_matrix(C_p.reshape(-1, 1))],
            [None, sp.csr_matrix(C_p.reshape(1, -1)), None],
        ],
        format="csc",
    )
    coupling = sp.vstack((K_ig, D_g, sp.csr_matrix((1, gamma.size))), format="csr")
    return LocalSchur(K_gg.tocsr(), coupling, factorize(block, MatrixKind.INDEFINITE))


@dataclass
class DirichletPreconditioner:
    """M = sum_k B^(k) D^(k)^-1 S^(k) D^(k)^-1 B^(k)^T with multiplicity scaling."""

    variant: str
    schur: list[LocalSchur]
    scaling: list[FloatArray]
    jump: JumpOperator
    pool: Executor | None = None

    def _local(self, k: int, r: FloatArray) -> FloatArray:
        B = self.jump.blocks[k]
        d = self.scaling[k]
        return B @ (self.schur[k].apply((B.T @ r) / d) / d)

    def apply(self, r: FloatArray) -> FloatArray:
        parts = patch_map(lambda k: self._local(k, r), len(self.schur), self.pool)
        return ordered_sum(parts, self.jump.n_multipliers)

    __call__ = apply


def build_preconditioner(
    systems: Sequence[LocalStokesSystem],
    primal: PrimalConstraints,
    jump: JumpOperator,
    scaling: Sequence[FloatArray],
    variant: str = "sd2",
    pool: Executor | None = None,
) -> DirichletPreconditioner:
    if variant not in PRECONDITIONERS:
        raise ConfigurationError(
            f"unknown preconditioner {variant!r}, expected one of {PRECONDITIONERS}"
        )
    schur = patch_map(
        lambda k: local_schur(systems[k], primal.C_p[k], variant), len(systems), pool
    )
    return DirichletPreconditioner(variant, schur, list(scaling), jump, pool)


def apply_preconditioner(M: DirichletPreconditioner, r: FloatArray) -> FloatArray:
    return M.apply(r)


@dataclass
class SolveReport:
    iterations: int
    residuals: list[float]
    kappa: float | None
    converged: bool
    multipliers: FloatArray
    seconds: float = 0.0
    solution: list[tuple[FloatArray, FloatArray]] = field(default_factory=list)

    @property
    def observed_rate(self) -> float:
        """Average residual reduction per iteration."""
        if self.iterations == 0 or self.residuals[0] == 0.0:
            return 0.0
        return float((self.residuals[-1] / self.residuals[0]) ** (1.0 / self.iterations))

    @property
    def rate_bound(self) -> float | None:
        """(sqrt(kappa) - 1) / (sqrt(kappa) + 1)."""
        if self.kappa is None:
            return None
        s = np.sqrt(self.kappa)
        return float((s - 1.0) / (s + 1.0))


def lanczos_kappa(alphas: Sequence[float], betas: Sequence[float]) -> float | None:
    """Condition estimate from the Lanczos matrix built out of the CG coefficients."""
    a = np.asarray(alphas, dtype=float)
    b = np.asarray(betas, dtype=float)[: max(a.size - 1, 0)]
    if a.size == 0 or not np.all(np.isfinite(a)) or np.any(a <= 0):
        return None
    if not np.all(np.isfinite(b)) or np.any(b < 0):
        return None
    diag = 1.0 / a
    diag[1:] += b / a[:-1]
    off = np.sqrt(b) / a[:-1]
    eigs = tridiag_eigenvalues(diag, off)
    if not np.all(np.isfinite(eigs)) or eigs[0] <= 0.0:
        return None
    return float(eigs[-1] / eigs[0])


def pcg_solve(
    F: Callable[[FloatArray], FloatArray],
    M: Callable[[FloatArray], FloatArray],
    g: FloatArray,
    tol: float = 1e-6,
    seed: int = 0,
    max_iter: int | None = None,
) -> SolveReport:
    """Preconditioned CG from a seeded uniform(-1, 1) initial guess.

    Stops once ||r_j|| <= tol * ||r_0||.
    """
    start = time.perf_counter()
    n = g.size
    max_iter = max_iter if max_iter is not None else max(10 * n, 1)
    rng = np.random.default_rng(seed)
    lam = rng.uniform(-1.0, 1.0, n)
    r = g - F(lam)
    norm0 = float(np.linalg.norm(r))
    residuals = [norm0]
    alphas: list[float] = []
    betas: list[float] = []
    if n == 0 or norm0 == 0.0:
        return SolveReport(0, residuals, None, True, lam, time.perf_counter() - start)

    z = M(r)
    p = z.copy()
    rz = float(r @ z)
    converged = False
    for _ in range(max_iter):
        q = F(p)
        alpha = rz / float(p @ q)
        alphas.append(alpha)
        lam += alpha * p
        r -= alpha * q
        residuals.append(float(np.linalg.norm(r)))
        if residuals[-1] <= tol * norm0:
            converged = True
            break
        z = M(r)
        rz_new = float(r @ z)
        beta = rz_new / rz
        betas.append(beta)
        p = z + beta * p
        rz = rz_new

    kappa = lanczos_kappa(alphas, betas)
    report = SolveReport(
        len(alphas), residuals, kappa, converged, lam, time.perf_counter() - start
    )
    logger.info(
        "pcg: %d iterations, converged=%s, kappa=%s",
        report.iterations,
        converged,
        "n/a" if kappa is None else f"{kappa:.4g}",
    )
    return report


def recover_solution(
    lam: FloatArray,
    augmented: Sequence[AugmentedLocalSystem],
    primal: PrimalSystem,
    jump: JumpOperator,
    lifts: Sequence[FloatArray] | None = None,
) -> list[tuple[FloatArray, FloatArray]]:
    """Per-patch (velocity, pressure) coefficients; the pressure has zero mean on the domain."""
    rhs_pi = np.concatenate((primal.b_pi - primal.B_pi.T @ lam, np.zeros(1)))
    x_pi = primal.solve(rhs_pi)[: primal.n_primal]

    def iterator() -> Iterator[tuple[FloatArray, FloatArray]]:
        for k, aug in enumerate(augmented):
            rhs = aug.rhs.copy()
            rhs[: aug.n_gamma] -= jump.blocks[k].T @ lam
            x = aug.solve(rhs)[: aug.n_x] + primal.psi[k] @ x_pi[primal.targets[k]]
            u, p = aug.expand(x)
            if lifts is not None:
                u += lifts[k]
            yield u, p

    solution = list(iterator())
    area = sum(aug.system.area for aug in augmented)
    mean = sum(aug.system.moments @ p for aug, (_, p) in zip(augmented, solution)) / area
    return [(u, p - mean) for u, p in solution]


@dataclass
class IetiSystem:
    """The assembled IETI-DP operators of one problem.

    Owns the worker pool shared by all patch loops; usable as a context manager,
    the pool is shut down on exit.
    """

    augmented: list[AugmentedLocalSystem]
    primal: PrimalSystem
    jump: JumpOperator
    schur: SchurOperator
    preconditioner: DirichletPreconditioner
    pool: Executor | None = None

    def __enter__(self) -> IetiSystem:
        return self

    def __exit__(self, exc_type, exc_value, traceback) -> None:  # type: ignore
        self.close()

    def close(self) -> None:
        if self.pool is not None:
            self.pool.shutdown()
            self.pool = None


def setup_ieti(
    systems: Sequence[LocalStokesSystem],
    constraints: PrimalConstraints,
    jump: JumpOperator,
    scaling: Sequence[FloatArray],
    preconditioner: str = "sd2",
    threads: int = 1,
) -> IetiSystem:
    pool = worker_pool(threads)
    try:
        augmented = build_augmented_systems(systems, constraints, pool)
        primal = build_primal_system(augmented, constraints, jump, pool)
        schur = SchurOperator(augmented, primal, jump, pool)
        M = build_preconditioner(systems, constraints, jump, scaling, preconditioner, pool)
    except Exception:
        if pool is not None:
            pool.shutdown()
        raise
    return IetiSystem(augmented, primal, jump, schur, M, pool)


def solve_ieti(
    ieti: IetiSystem,
    lifts: Sequence[FloatArray] | None = None,
    tol: float = 1e-6,
    seed: int = 0,
    max_iter: int | None = None,
) -> SolveReport:
    start = time.perf_counter()
    report = pcg_solve(ieti.schur, ieti.preconditioner, ieti.schur.rhs(), tol, seed, max_iter)
    report.solution = recover_solution(
        report.multipliers, ieti.augmented, ieti.primal, ieti.jump, lifts
    )
    report.seconds = time.perf_counter() - start
    return report
