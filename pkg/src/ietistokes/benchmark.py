"""Benchmark problem, parameter sweeps and the monolithic reference solver."""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence, TypedDict

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from . import FloatArray, IntArray
from .coupling import (
    VARIANTS,
    build_interface_map,
    build_jump_operator,
    build_primal_constraints,
    multiplicity_scaling,
)
from .discretization import (
    LocalStokesSystem,
    ScalarField,
    TaylorHoodPatchSpace,
    VectorField,
    assemble_local,
    build_spaces,
    dirichlet_lift,
    patch_errors,
    patch_mean,
)
from .errors import ConfigurationError, SizeGuardError
from .geometry import (
    YETI_ASSET,
    InitialRefinement,
    MultiPatch,
    initial_refinement,
    load_multipatch,
    quarter_annulus,
    unit_square,
    yeti_rules,
)
from .linalg import MatrixKind, factorize
from .solver import (
    PRECONDITIONERS,
    SolveReport,
    patch_map,
    setup_ieti,
    solve_ieti,
    worker_pool,
)

logger = logging.getLogger(__name__)

DOMAINS = ("unit-square", "quarter-annulus", "yeti")
FORMATS = ("csv", "markdown")
MAX_MONOLITHIC_DOFS = 200_000

UNEXPECTED_ERRORS: list[str] = []


@dataclass(frozen=True)
class BenchmarkProblem:
    """Manufactured Stokes solution: -Laplace(u) - grad(p) = f, div(u) = 0."""

    rhs: VectorField
    velocity: VectorField
    pressure: ScalarField


def _rhs(x: FloatArray) -> FloatArray:
    px, py = np.pi * x[:, 0], np.pi * x[:, 1]
    return np.column_stack(
        (
            -np.pi * np.cos(px) - 2 * np.pi**2 * np.sin(px) * np.cos(py),
            2 * np.pi**2 * np.cos(px) * np.sin(py),
        )
    )


def _velocity(x: FloatArray) -> FloatArray:
    px, py = np.pi * x[:, 0], np.pi * x[:, 1]
    return np.column_stack((-np.sin(px) * np.cos(py), np.cos(px) * np.sin(py)))


def _pressure(x: FloatArray) -> FloatArray:
    return np.sin(np.pi * x[:, 0])


def benchmark_problem() -> BenchmarkProblem:
    """The pressure is sin(pi x); shift it by its domain mean before comparing."""
    return BenchmarkProblem(_rhs, _velocity, _pressure)


def build_domain(
    domain: str, patches: int = 8, geometry: Path | None = None
) -> tuple[MultiPatch, InitialRefinement]:
    """Multipatch domain and its level-0 refinement.

    `patches` is the number of patches per direction of the unit square and the
    quarter annulus; `geometry` overrides the built-in footprint file.
    """
    if domain == "unit-square":
        mp = unit_square(patches)
        return mp, initial_refinement(mp)
    if domain == "quarter-annulus":
        mp = quarter_annulus(patches, patches)
        return mp, initial_refinement(mp)
    if domain == "yeti":
        mp = load_multipatch(geometry or YETI_ASSET)
        return mp, initial_refinement(mp, yeti_rules(mp))
    raise ConfigurationError(f"unknown domain {domain!r}, expected one of {DOMAINS}")


@dataclass
class Discretization:
    """Everything of one (domain, level, degree) that does not depend on the solver."""

    mp: MultiPatch
    level: int
    degree: int
    spaces: list[TaylorHoodPatchSpace]
    systems: list[LocalStokesSystem]
    lifts: list[FloatArray]
    problem: BenchmarkProblem

    @property
    def n_dofs(self) -> int:
        return sum(s.space.retained.size + s.space.n_pressure for s in self.systems)


def discretize(
    mp: MultiPatch,
    refinement: InitialRefinement,
    level: int,
    degree: int,
    problem: BenchmarkProblem | None = None,
    threads: int = 1,
) -> Discretization:
    problem = problem or benchmark_problem()
    spaces = build_spaces(mp, refinement, level, degree)
    pool = worker_pool(threads)
    try:
        raw = patch_map(
            lambda k: assemble_local(mp.patches[k], spaces[k], problem.rhs, k),
            mp.n_patches,
            pool,
        )
    finally:
        if pool is not None:
            pool.shutdown()
    lifts, systems = dirichlet_lift(mp, raw, problem.velocity)
    logger.debug("discretized level %d, degree %d: %d patches", level, degree, mp.n_patches)
    return Discretization(mp, level, degree, spaces, systems, lifts, problem)


def solve_point(
    disc: Discretization,
    variant: str,
    preconditioner: str,
    tol: float = 1e-6,
    seed: int = 0,
    threads: int = 1,
    max_iter: int | None = None,
) -> SolveReport:
    dof_map = build_interface_map(disc.mp, disc.spaces)
    constraints = build_primal_constraints(
        disc.mp, disc.spaces, variant, [s.moments for s in disc.systems]
    )
    jump = build_jump_operator(dof_map, constraints, disc.spaces)
    scaling = multiplicity_scaling(dof_map, disc.spaces, constraints)
    with setup_ieti(disc.systems, constraints, jump, scaling, preconditioner, threads) as ieti:
        return solve_ieti(ieti, disc.lifts, tol, seed, max_iter)


def solution_errors(
    disc: Discretization, solution: Sequence[tuple[FloatArray, FloatArray]]
) -> tuple[float, float]:
    """L2 errors of velocity and mean-free pressure against the manufactured solution."""
    integrals = [
        patch_mean(disc.mp.patches[k], disc.spaces[k], disc.problem.pressure)
        for k in range(disc.mp.n_patches)
    ]
    mean = sum(i for i, _ in integrals) / sum(a for _, a in integrals)

    def exact_pressure(x: FloatArray) -> FloatArray:
        return disc.problem.pressure(x) - mean

    err_u = err_p = 0.0
    for k, (u, p) in enumerate(solution):
        eu, ep = patch_errors(
            disc.mp.patches[k], disc.spaces[k], u, p, disc.problem.velocity, exact_pressure
        )
        err_u += eu
        err_p += ep
    return float(np.sqrt(err_u)), float(np.sqrt(err_p))


def global_velocity_numbering(disc: Discretization) -> tuple[list[IntArray], int]:
    """Global scalar index of every retained scalar velocity dof, per patch (-1 if eliminated)."""
    offsets = np.cumsum([0] + [s.n_scalar for s in disc.spaces])
    rows, cols = [], []
    dof_map = build_interface_map(disc.mp, disc.spaces)
    for pairs in dof_map.pairs:
        rows.extend(offsets[pairs.interface.patch_a] + pairs.a)
        cols.extend(offsets[pairs.interface.patch_b] + pairs.b)
    for members in dof_map.corner_classes:
        first = offsets[members[0][0]] + members[0][1]
        for k, i in members[1:]:
            rows.append(first)
            cols.append(offsets[k] + i)

    eliminated = np.zeros(offsets[-1], dtype=bool)
    for k, s in enumerate(disc.spaces):
        eliminated[offsets[k] + s.scalar_eliminated] = True
    graph = sp.coo_matrix(
        (np.ones(len(rows)), (np.asarray(rows, dtype=np.int64), np.asarray(cols, dtype=np.int64))),
        shape=(offsets[-1],) * 2,
    )
    _, labels = connected_components(graph, directed=False)

    # renumber retained classes in order of first appearance
    numbering = np.full(offsets[-1], -1, dtype=np.int64)
    seen: dict[int, int] = {}
    for n in np.nonzero(~eliminated)[0]:
        numbering[n] = seen.setdefault(int(labels[n]), len(seen))
    return [numbering[offsets[k] : offsets[k + 1]] for k in range(len(disc.spaces))], len(seen)


def monolithic_oracle(
    disc: Discretization, max_dofs: int = MAX_MONOLITHIC_DOFS
) -> list[tuple[FloatArray, FloatArray]]:
    """Direct solve of the conforming coupled system with one global pressure-mean row."""
    if disc.n_dofs > max_dofs:
        raise SizeGuardError(f"{disc.n_dofs} dofs exceed the direct-solve limit of {max_dofs}")
    numbering, n_scalar = global_velocity_numbering(disc)
    n_vel = 2 * n_scalar
    p_offsets = np.cumsum([0] + [s.space.n_pressure for s in disc.systems])
    n_p = int(p_offsets[-1])

    scatters = []
    for k, system in enumerate(disc.systems):
        space = system.space
        local = space.retained
        comp = local // space.n_scalar
        glob = numbering[k][local % space.n_scalar] + comp * n_scalar
        scatters.append(
            sp.csr_matrix(
                (np.ones(local.size), (glob, np.arange(local.size))), shape=(n_vel, local.size)
            )
        )

    K = sum(
        (P @ s.K[s.space.retained][:, s.space.retained] @ P.T for P, s in zip(scatters, disc.systems)),
        sp.csr_matrix((n_vel, n_vel)),
    )
    D = sp.vstack([s.D[:, s.space.retained] @ P.T for P, s in zip(scatters, disc.systems)])
    f = sum(P @ s.f[s.space.retained] for P, s in zip(scatters, disc.systems))
    g = np.concatenate([s.g for s in disc.systems])
    mean = np.concatenate([s.moments for s in disc.systems])

    A = sp.bmat(
        [
            [K, D.T, None],
            [D, None, sp.csr_matrix(mean.reshape(-1, 1))],
            [None, sp.csr_matrix(mean.reshape(1, -1)), None],
        ],
        format="csc",
    )
    x = factorize(A, MatrixKind.INDEFINITE).solve(np.concatenate((f, g, np.zeros(1))))
    logger.info("monolithic solve with %d unknowns", A.shape[0])

    def iterator() -> Iterator[tuple[FloatArray, FloatArray]]:
        for k, system in enumerate(disc.systems):
            u = disc.lifts[k].copy()
            u[system.space.retained] += scatters[k].T @ x[:n_vel]
            yield u, x[n_vel + p_offsets[k] : n_vel + p_offsets[k + 1]].copy()

    return list(iterator())


def relative_difference(
    a: Sequence[tuple[FloatArray, FloatArray]], b: Sequence[tuple[FloatArray, FloatArray]]
) -> float:
    """Relative coefficient-norm distance of two per-patch solutions."""
    va = np.concatenate([np.concatenate(pair) for pair in a])
    vb = np.concatenate([np.concatenate(pair) for pair in b])
    return float(np.linalg.norm(va - vb) / max(np.linalg.norm(vb), 1e-300))


def parse_range(text: str) -> list[int]:
    """'2..5' or '2,3,5'."""
    text = text.strip()
    try:
        if ".." in text:
            lo, hi = text.split("..", 1)
            return list(range(int(lo), int(hi) + 1))
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise ConfigurationError(f"invalid range {text!r}, expected 'a..b' or a comma list")


@dataclass
class ExperimentConfig:
    domain: str
    levels: list[int]
    degrees: list[int]
    variants: list[str] = field(default_factory=lambda: list(VARIANTS))
    preconditioners: list[str] = field(default_factory=lambda: list(PRECONDITIONERS))
    tolerance: float = 1e-6
    seed: int = 0
    output_format: str = "csv"
    geometry: Path | None = None
    patches: int = 8
    threads: int = 1
    max_iter: int | None = None

    def __post_init__(self) -> None:
        if self.domain not in DOMAINS:
            raise ConfigurationError(f"unknown domain {self.domain!r}, expected one of {DOMAINS}")
        for name in ("levels", "degrees", "variants", "preconditioners"):
            if not getattr(self, name):
                raise ConfigurationError(f"{name} must not be empty")
        if min(self.levels) < 1:
            raise ConfigurationError("levels must be at least 1")
        if min(self.degrees) < 2:
            raise ConfigurationError("degrees must be at least 2")
        unknown = set(self.variants) - set(VARIANTS)
        if unknown:
            raise ConfigurationError(f"unknown variants {sorted(unknown)}, expected {VARIANTS}")
        unknown = set(self.preconditioners) - set(PRECONDITIONERS)
        if unknown:
            raise ConfigurationError(
                f"unknown preconditioners {sorted(unknown)}, expected {PRECONDITIONERS}"
            )
        if self.output_format not in FORMATS:
            raise ConfigurationError(f"unknown format {self.output_format!r}, expected {FORMATS}")
        if not self.tolerance > 0:
            raise ConfigurationError("tolerance must be positive")
        if self.patches < 1 or self.threads < 1:
            raise ConfigurationError("patches and threads must be positive")

    def points(self) -> Iterator[tuple[int, int, str, str]]:
        for level in self.levels:
            for degree in self.degrees:
                for variant in self.variants:
                    for precond in self.preconditioners:
                        yield level, degree, variant, precond


class ResultRow(TypedDict):
    domain: str
    level: int
    degree: int
    variant: str
    precond: str
    iterations: int | None
    kappa: float | None
    seconds: float
    status: str
    velocity_error: float | None
    pressure_error: float | None


class ResultCache:
    """Sweep results keyed by the sweep point, stored as JSON.

    Usable as a context manager; the cache is saved on exit.
    """

    def __init__(self, cache: dict[str, ResultRow], cache_file: Path, force_invalid: bool) -> None:
        self.cache = cache
        self.cache_file = cache_file
        self.force_invalid = force_invalid

    def __enter__(self) -> ResultCache:
        return self

    def __exit__(self, exc_type, exc_value, traceback) -> None:  # type: ignore
        self.save()

    @classmethod
    def load(cls, cache_file: Path, force_invalid: bool = False) -> ResultCache:
        if not cache_file.exists():
            return cls({}, cache_file, force_invalid)

        with open(cache_file, "r") as f:
            try:
                return cls(json.load(f), cache_file, force_invalid)
            except json.JSONDecodeError:
                return cls({}, cache_file, force_invalid)

    def is_valid(self, key: str) -> bool:
        if self.force_invalid:
            return False
        return key in self.cache

    def get(self, key: str) -> ResultRow:
        return self.cache[key]

    def set(self, key: str, row: ResultRow) -> None:
        self.cache[key] = row

    def save(self) -> None:
        with open(self.cache_file, "w") as f:
            json.dump(self.cache, f, indent=4)


def point_key(cfg: ExperimentConfig, level: int, degree: int, variant: str, precond: str) -> str:
    """md5 of the sweep point and, for file-based domains, of the geometry file."""
    geometry = ""
    if cfg.domain == "yeti":
        with open(cfg.geometry or YETI_ASSET, "r") as f:
            geometry = hashlib.md5(f.read().encode()).hexdigest()
    point = {
        "domain": cfg.domain,
        "patches": cfg.patches,
        "geometry": geometry,
        "level": level,
        "degree": degree,
        "variant": variant,
        "precond": precond,
        "tolerance": cfg.tolerance,
        "seed": cfg.seed,
        "max_iter": cfg.max_iter,
    }
    return hashlib.md5(json.dumps(point, sort_keys=True).encode()).hexdigest()


def row_status(report: SolveReport) -> str:
    # no multipliers, or the initial guess already solves the dual problem
    if report.iterations == 0:
        return "trivial"
    if not report.converged:
        return "no-converge"
    if report.kappa is None:
        return "kappa-nan"
    return "ok"


def error_row(
    cfg: ExperimentConfig, level: int, degree: int, variant: str, precond: str, err: str
) -> ResultRow:
    return ResultRow(
        domain=cfg.domain,
        level=level,
        degree=degree,
        variant=variant,
        precond=precond,
        iterations=None,
        kappa=None,
        seconds=0.0,
        status=f"error:{err}",
        velocity_error=None,
        pressure_error=None,
    )


def report_uncaught_error(point: str, err: str) -> None:
    """Process unexpected error by appending it to the list of errors."""
    UNEXPECTED_ERRORS.append(f"Error happened at sweep point {point}")
    UNEXPECTED_ERRORS.append(f"Err: {err}")


def run_experiment(cfg: ExperimentConfig, cache: ResultCache | None = None) -> list[ResultRow]:
    """One row per sweep point, in sweep order; failures are recorded in the row."""
    mp, refinement = build_domain(cfg.domain, cfg.patches, cfg.geometry)
    discretizations: dict[tuple[int, int], Discretization | str] = {}

    def discretization(level: int, degree: int) -> Discretization:
        key = (level, degree)
        if key not in discretizations:
            try:
                discretizations[key] = discretize(
                    mp, refinement, level, degree, threads=cfg.threads
                )
            except Exception as e:
                discretizations[key] = str(e)
        found = discretizations[key]
        if isinstance(found, str):
            raise RuntimeError(found)
        return found

    def iterator() -> Iterator[ResultRow]:
        for level, degree, variant, precond in cfg.points():
            key = point_key(cfg, level, degree, variant, precond)
            if cache is not None and cache.is_valid(key):
                yield cache.get(key)
                continue

            # one failing point must not stop the sweep
            try:
                start = time.perf_counter()
                disc = discretization(level, degree)
                report = solve_point(
                    disc, variant, precond, cfg.tolerance, cfg.seed, cfg.threads, cfg.max_iter
                )
                err_u, err_p = solution_errors(disc, report.solution)
                row = ResultRow(
                    domain=cfg.domain,
                    level=level,
                    degree=degree,
                    variant=variant,
                    precond=precond,
                    iterations=report.iterations or None,
                    kappa=report.kappa,
                    seconds=time.perf_counter() - start,
                    status=row_status(report),
                    velocity_error=err_u,
                    pressure_error=err_p,
                )
            except Exception as e:
                point = f"{cfg.domain} level={level} degree={degree} {variant}/{precond}"
                report_uncaught_error(point, str(e))
                yield error_row(cfg, level, degree, variant, precond, str(e))
                continue

            logger.info(
                "%s level=%d degree=%d %s/%s: %s iterations (%s)",
                cfg.domain,
                level,
                degree,
                variant,
                precond,
                row["iterations"],
                row["status"],
            )
            if cache is not None:
                cache.set(key, row)
            yield row

    return list(iterator())

