"""Patch-local Taylor-Hood spaces and assembly of the Stokes blocks.

Velocity coefficients of a patch are ordered component-major: all x-components
(flat tensor index i + j * nu), then all y-components.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Iterator, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from typing_extensions import TypeAlias

from . import FloatArray, IntArray
from .errors import GeometryError
from .geometry import GeometryMap, InitialRefinement, MultiPatch
from .splines import TensorSplineSpace, basis_matrices, make_knots

logger = logging.getLogger(__name__)

# Vector field evaluated at physical points (m, 2) -> values (m, 2)
VectorField: TypeAlias = Callable[[FloatArray], FloatArray]
ScalarField: TypeAlias = Callable[[FloatArray], FloatArray]


@dataclass(frozen=True)
class TaylorHoodPatchSpace:
    """Velocity space of degree p+1 and pressure space of degree p, both C^(p-1)."""

    velocity: TensorSplineSpace
    pressure: TensorSplineSpace
    dirichlet_sides: frozenset[int] = frozenset()
    interface_sides: frozenset[int] = frozenset()
    # corners whose vertex touches the domain boundary only through this corner
    dirichlet_corners: frozenset[int] = frozenset()

    @property
    def degree(self) -> int:
        return self.pressure.factors[0].degree

    @property
    def n_scalar(self) -> int:
        return self.velocity.dimension

    @property
    def n_velocity(self) -> int:
        return 2 * self.velocity.dimension

    @property
    def n_pressure(self) -> int:
        return self.pressure.dimension

    def vector_indices(self, scalar: IntArray, component: int) -> IntArray:
        return np.asarray(scalar, dtype=np.int64) + component * self.n_scalar

    def _both(self, scalar: IntArray) -> IntArray:
        return np.concatenate((self.vector_indices(scalar, 0), self.vector_indices(scalar, 1)))

    @cached_property
    def scalar_eliminated(self) -> IntArray:
        found: set[int] = set()
        for side in self.dirichlet_sides:
            found.update(int(i) for i in self.velocity.side_indices(side))
        for corner in self.dirichlet_corners:
            found.add(self.velocity.corner_index(corner))
        return np.array(sorted(found), dtype=np.int64)

    @cached_property
    def scalar_gamma(self) -> IntArray:
        found: set[int] = set()
        for side in self.interface_sides:
            found.update(int(i) for i in self.velocity.side_indices(side))
        found.difference_update(int(i) for i in self.scalar_eliminated)
        return np.array(sorted(found), dtype=np.int64)

    @cached_property
    def scalar_interior(self) -> IntArray:
        mask = np.ones(self.n_scalar, dtype=bool)
        mask[self.scalar_eliminated] = False
        mask[self.scalar_gamma] = False
        return np.nonzero(mask)[0].astype(np.int64)

    @cached_property
    def eliminated(self) -> IntArray:
        return self._both(self.scalar_eliminated)

    @cached_property
    def gamma(self) -> IntArray:
        return self._both(self.scalar_gamma)

    @cached_property
    def interior(self) -> IntArray:
        return self._both(self.scalar_interior)

    @cached_property
    def retained(self) -> IntArray:
        return np.sort(np.concatenate((self.gamma, self.interior)))


def taylor_hood_space(
    degree: int,
    elements: tuple[int, int],
    dirichlet_sides: Sequence[int] = (),
    interface_sides: Sequence[int] = (),
    dirichlet_corners: Sequence[int] = (),
) -> TaylorHoodPatchSpace:
    n_u, n_v = elements
    velocity = TensorSplineSpace(
        (make_knots(degree + 1, degree - 1, n_u), make_knots(degree + 1, degree - 1, n_v))
    )
    pressure = TensorSplineSpace(
        (make_knots(degree, degree - 1, n_u), make_knots(degree, degree - 1, n_v))
    )
    return TaylorHoodPatchSpace(
        velocity,
        pressure,
        frozenset(dirichlet_sides),
        frozenset(interface_sides),
        frozenset(dirichlet_corners),
    )


def build_spaces(
    mp: MultiPatch, refinement: InitialRefinement, level: int, degree: int
) -> list[TaylorHoodPatchSpace]:
    """Spaces of all patches on refinement `level`; every boundary side is Dirichlet."""

    def iterator() -> Iterator[TaylorHoodPatchSpace]:
        for k in range(mp.n_patches):
            yield taylor_hood_space(
                degree,
                refinement.at_level(k, level),
                dirichlet_sides=mp.boundary_sides(k),
                interface_sides=mp.interface_sides(k),
                dirichlet_corners=mp.dirichlet_corners(k),
            )

    return list(iterator())


@dataclass(frozen=True)
class PatchQuadrature:
    """Tensor Gauss-Legendre rule mapped to the physical patch.

    Nodes are ordered v-major: flat node index = qv * Nu + qu.
    """

    u: FloatArray
    v: FloatArray
    points: FloatArray
    weights: FloatArray
    inv_jac: FloatArray

    @property
    def size(self) -> int:
        return self.weights.size


def gauss_nodes(breaks: FloatArray, n: int) -> tuple[FloatArray, FloatArray]:
    x, w = np.polynomial.legendre.leggauss(n)
    lo, hi = breaks[:-1, None], breaks[1:, None]
    nodes = (lo + hi) / 2 + (hi - lo) / 2 * x[None, :]
    weights = (hi - lo) / 2 * w[None, :]
    return nodes.ravel(), weights.ravel()


def patch_quadrature(
    patch: GeometryMap, space: TaylorHoodPatchSpace, patch_index: int = 0
) -> PatchQuadrature:
    n = space.degree + 2
    u, wu = gauss_nodes(space.velocity.factors[0].breaks, n)
    v, wv = gauss_nodes(space.velocity.factors[1].breaks, n)
    x, jac = patch.evaluate_grid(u, v)
    det = np.linalg.det(jac)
    scale = np.abs(det).max()
    bad = np.abs(det) <= 1e-12 * max(scale, 1e-300)
    if bad.any():
        a, b = np.argwhere(bad)[0]
        raise GeometryError(patch_index, (float(u[a]), float(v[b])), float(det[a, b]))
    # grid arrays are (Nu, Nv, ...); flatten with u running fastest
    points = x.transpose(1, 0, 2).reshape(-1, 2)
    inv_jac = np.linalg.inv(jac).transpose(1, 0, 2, 3).reshape(-1, 2, 2)
    weights = (np.outer(wv, wu) * np.abs(det).T).ravel()
    return PatchQuadrature(u, v, points, weights, inv_jac)


def tensor_values(space: TensorSplineSpace, quad: PatchQuadrature) -> sp.csr_matrix:
    bu = basis_matrices(space.factors[0], quad.u, 0)[0]
    bv = basis_matrices(space.factors[1], quad.v, 0)[0]
    return sp.kron(sp.csr_matrix(bv), sp.csr_matrix(bu), format="csr")


def tensor_gradients(
    space: TensorSplineSpace, quad: PatchQuadrature
) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """Physical partial derivatives d/dx, d/dy of all basis functions at the nodes."""
    bu = basis_matrices(space.factors[0], quad.u, 1)
    bv = basis_matrices(space.factors[1], quad.v, 1)
    d_u = sp.kron(sp.csr_matrix(bv[0]), sp.csr_matrix(bu[1]), format="csr")
    d_v = sp.kron(sp.csr_matrix(bv[1]), sp.csr_matrix(bu[0]), format="csr")
    inv = quad.inv_jac

    def pull_back(i: int) -> sp.csr_matrix:
        # d/dx_i = sum_k (d xi_k / d x_i) d/dxi_k
        return (sp.diags(inv[:, 0, i]) @ d_u + sp.diags(inv[:, 1, i]) @ d_v).tocsr()

    return pull_back(0), pull_back(1)


@dataclass(frozen=True)
class LocalStokesSystem:
    """Uncoupled Stokes blocks of one patch on the full (unreduced) velocity space.

    `g` is the pressure right-hand side; it is nonzero only after lifting.
    """

    space: TaylorHoodPatchSpace
    K: sp.csr_matrix
    D: sp.csr_matrix
    f: FloatArray
    g: FloatArray
    moments: FloatArray

    @property
    def gamma(self) -> IntArray:
        return self.space.gamma

    @property
    def interior(self) -> IntArray:
        return self.space.interior

    @property
    def area(self) -> float:
        return float(self.moments.sum())

    def lifted(self, lift: FloatArray) -> LocalStokesSystem:
        """Loads with the boundary lift moved to the right-hand side."""
        return LocalStokesSystem(
            self.space,
            self.K,
            self.D,
            self.f - self.K @ lift,
            self.g - self.D @ lift,
            self.moments,
        )


def assemble_local(
    patch: GeometryMap,
    space: TaylorHoodPatchSpace,
    rhs: VectorField,
    patch_index: int = 0,
) -> LocalStokesSystem:
    quad = patch_quadrature(patch, space, patch_index)
    w = sp.diags(quad.weights)

    values = tensor_values(space.velocity, quad)
    gx, gy = tensor_gradients(space.velocity, quad)
    q = tensor_values(space.pressure, quad)

    ks = gx.T @ w @ gx + gy.T @ w @ gy
    ks = (ks + ks.T) / 2
    K = sp.block_diag((ks, ks), format="csr")
    D = sp.hstack((q.T @ w @ gx, q.T @ w @ gy), format="csr")

    load = rhs(quad.points) * quad.weights[:, None]
    f = np.concatenate((values.T @ load[:, 0], values.T @ load[:, 1]))
    moments = q.T @ quad.weights

    logger.debug(
        "assembled patch %d: %d velocity dofs, %d pressure dofs, %d quadrature nodes",
        patch_index,
        space.n_velocity,
        space.n_pressure,
        quad.size,
    )
    return LocalStokesSystem(space, K, D, f, np.zeros(space.n_pressure), moments)


def pressure_moments(patch: GeometryMap, space: TaylorHoodPatchSpace) -> FloatArray:
    """Integrals of the pressure basis functions over the physical patch."""
    quad = patch_quadrature(patch, space)
    return tensor_values(space.pressure, quad).T @ quad.weights


def interpolate_side(
    patch: GeometryMap, space: TaylorHoodPatchSpace, side: int, g: VectorField
) -> FloatArray:
    """Greville interpolation of g along one side; returns (n_side, 2) coefficients."""
    kv = space.velocity.side_factor(side)
    t = kv.greville()
    values = g(patch.trace(side, t))
    coefs = scipy.linalg.solve(basis_matrices(kv, t)[0], values)
    # open knot vectors interpolate at the end points
    coefs[0], coefs[-1] = values[0], values[-1]
    return coefs


def dirichlet_lift(
    mp: MultiPatch, systems: Sequence[LocalStokesSystem], g: VectorField
) -> tuple[list[FloatArray], list[LocalStokesSystem]]:
    """Boundary lift per patch and the systems with homogeneous eliminated dofs."""

    def iterator() -> Iterator[tuple[FloatArray, LocalStokesSystem]]:
        for k, system in enumerate(systems):
            space = system.space
            patch = mp.patches[k]
            lift = np.zeros(space.n_velocity)
            for side in sorted(space.dirichlet_sides):
                idx = space.velocity.side_indices(side)
                coefs = interpolate_side(patch, space, side, g)
                lift[space.vector_indices(idx, 0)] = coefs[:, 0]
                lift[space.vector_indices(idx, 1)] = coefs[:, 1]
            for corner in sorted(space.dirichlet_corners):
                i = space.velocity.corner_index(corner)
                value = g(patch.corner_point(corner)[None, :])[0]
                lift[i], lift[i + space.n_scalar] = value
            yield lift, system.lifted(lift)

    pairs = list(iterator())
    return [lift for lift, _ in pairs], [system for _, system in pairs]


def patch_errors(
    patch: GeometryMap,
    space: TaylorHoodPatchSpace,
    u: FloatArray,
    p: FloatArray,
    velocity: VectorField,
    pressure: ScalarField,
) -> tuple[float, float]:
    """Squared L2 errors of the velocity and the pressure on one patch."""
    quad = patch_quadrature(patch, space)
    values = tensor_values(space.velocity, quad)
    n = space.n_scalar
    uh = np.column_stack((values @ u[:n], values @ u[n:]))
    ph = tensor_values(space.pressure, quad) @ p
    eu = np.sum((uh - velocity(quad.points)) ** 2, axis=1)
    ep = (ph - pressure(quad.points)) ** 2
    return float(quad.weights @ eu), float(quad.weights @ ep)


def patch_mean(
    patch: GeometryMap, space: TaylorHoodPatchSpace, f: ScalarField
) -> tuple[float, float]:
    """Integral of f over the patch and the patch area."""
    quad = patch_quadrature(patch, space)
    return float(quad.weights @ f(quad.points)), float(quad.weights.sum())
