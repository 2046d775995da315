"""Identification of interface dofs, jump operators and primal constraints."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np
import scipy.sparse as sp

from . import FloatArray, IntArray
from .discretization import TaylorHoodPatchSpace, gauss_nodes
from .errors import (
    DimensionMismatchError,
    FullyMatchingError,
    MultiplicityError,
    UnknownVariantError,
)
from .geometry import GeometryMap, Interface, MultiPatch, side_parameters
from .splines import CORNERS, KnotVector, basis_matrices

logger = logging.getLogger(__name__)

VARIANTS = ("c", "ce", "cn")


@dataclass(frozen=True)
class InterfacePairs:
    """Matching scalar velocity dofs of one interface, eliminated dofs removed."""

    interface: Interface
    a: IntArray
    b: IntArray


@dataclass(frozen=True)
class InterfaceDofMap:
    pairs: tuple[InterfacePairs, ...]
    # per corner class: (patch, scalar dof) of every non-eliminated member
    corner_classes: tuple[tuple[tuple[int, int], ...], ...]

    @property
    def n_pairs(self) -> int:
        return sum(p.a.size for p in self.pairs)


def _mirrored(kv: KnotVector) -> KnotVector:
    return KnotVector(kv.degree, 1.0 - kv.knots[::-1])


def build_interface_map(
    mp: MultiPatch, spaces: Sequence[TaylorHoodPatchSpace]
) -> InterfaceDofMap:
    def pairs() -> Iterator[InterfacePairs]:
        for itf in mp.interfaces:
            sa, sb = spaces[itf.patch_a], spaces[itf.patch_b]
            kv_a = sa.velocity.side_factor(itf.side_a)
            kv_b = sb.velocity.side_factor(itf.side_b)
            if kv_a != (_mirrored(kv_b) if itf.reversed else kv_b):
                raise FullyMatchingError(
                    f"velocity traces on interface between patch {itf.patch_a} and "
                    f"patch {itf.patch_b} do not match "
                    f"(dimensions {kv_a.dimension} and {kv_b.dimension})"
                )
            a = sa.velocity.side_indices(itf.side_a)
            b = sb.velocity.side_indices(itf.side_b)
            if itf.reversed:
                b = b[::-1]
            keep = ~np.isin(a, sa.scalar_eliminated) & ~np.isin(b, sb.scalar_eliminated)
            yield InterfacePairs(itf, a[keep], b[keep])

    def corner_classes() -> Iterator[tuple[tuple[int, int], ...]]:
        for members in mp.corner_classes:
            dofs = tuple(
                (k, spaces[k].velocity.corner_index(c))
                for k, c in members
                if spaces[k].velocity.corner_index(c) not in spaces[k].scalar_eliminated
            )
            if dofs:
                yield dofs

    return InterfaceDofMap(tuple(pairs()), tuple(corner_classes()))


def gamma_positions(space: TaylorHoodPatchSpace, vector: IntArray) -> IntArray:
    """Positions of full-space velocity indices inside u_Gamma."""
    pos = np.searchsorted(space.gamma, vector)
    found = np.minimum(pos, max(space.gamma.size - 1, 0))
    if np.size(vector) and (
        space.gamma.size == 0 or not np.array_equal(space.gamma[found], vector)
    ):
        missing = np.setdiff1d(vector, space.gamma)
        raise DimensionMismatchError(f"dofs {missing.tolist()} are not interface dofs")
    return pos


def _triplet_matrix(
    data: Sequence[tuple[int, int, float]], shape: tuple[int, int]
) -> sp.csr_matrix:
    rows = np.array([d[0] for d in data], dtype=np.int64)
    cols = np.array([d[1] for d in data], dtype=np.int64)
    vals = np.array([d[2] for d in data], dtype=float)
    return sp.csr_matrix((vals, (rows, cols)), shape=shape)


@dataclass(frozen=True)
class PrimalConstraints:
    """Primal constraint rows of all patches.

    Local row 0 is the pressure average C_p, rows 1.. are the velocity rows C_v.
    Global primal numbering: corner classes, edge classes, pressure averages.
    """

    variant: str
    C_v: tuple[sp.csr_matrix, ...]
    C_p: tuple[FloatArray, ...]
    R_C: tuple[sp.csr_matrix, ...]
    n_primal: int
    pressure_primal: tuple[int, ...]
    corner_dofs: tuple[frozenset[int], ...]

    @property
    def n_patches(self) -> int:
        return len(self.C_p)

    def n_local(self, k: int) -> int:
        return 1 + self.C_v[k].shape[0]


def edge_weights(
    patch: GeometryMap,
    space: TaylorHoodPatchSpace,
    side: int,
    normal_sign: float | None = None,
) -> FloatArray:
    """Edge averages of the side basis functions over the physical edge.

    Returns (2, n_side): row c holds (1/L) int phi_i ds for component c, or with
    normal_sign given, (1/L) int phi_i n_c ds with n = normal_sign * (t_y, -t_x)/|t|.
    """
    kv = space.velocity.side_factor(side)
    t, w = gauss_nodes(kv.breaks, space.degree + 2)
    u, v = side_parameters(side, t)
    jac = patch.jacobian(u, v)
    tangent = jac[:, :, 1] if side in (0, 1) else jac[:, :, 0]
    speed = np.linalg.norm(tangent, axis=1)
    ds = w * speed
    values = basis_matrices(kv, t)[0]
    length = ds.sum()
    if normal_sign is None:
        row = values.T @ ds / length
        return np.vstack((row, row))
    normal = normal_sign * np.column_stack((tangent[:, 1], -tangent[:, 0])) / speed[:, None]
    return np.vstack(
        (values.T @ (ds * normal[:, 0]) / length, values.T @ (ds * normal[:, 1]) / length)
    )


def build_primal_constraints(
    mp: MultiPatch,
    spaces: Sequence[TaylorHoodPatchSpace],
    variant: str,
    moments: Sequence[FloatArray],
) -> PrimalConstraints:
    """Primal rows for the variants c (corners), ce (corners and edge averages)
    and cn (corners and normal edge averages)."""
    if variant not in VARIANTS:
        raise UnknownVariantError(f"unknown primal variant {variant!r}, expected one of {VARIANTS}")

    on_boundary = mp.boundary_vertex_classes()
    corner_classes = [c for c in range(len(mp.corner_classes)) if c not in on_boundary]
    corner_number = {c: n for n, c in enumerate(corner_classes)}
    per_edge = {"c": 0, "ce": 2, "cn": 1}[variant]
    edge_base = 2 * len(corner_classes)
    pressure_base = edge_base + per_edge * len(mp.interfaces)

    # (patch, side) -> (interface ordinal, normal sign)
    edge_of: dict[tuple[int, int], tuple[int, float]] = {}
    for n, itf in enumerate(mp.interfaces):
        edge_of[(itf.patch_a, itf.side_a)] = (n, 1.0)
        edge_of[(itf.patch_b, itf.side_b)] = (n, -1.0 if itf.reversed else 1.0)

    C_v, R_C, corner_dofs = [], [], []
    for k, space in enumerate(spaces):
        n = space.n_scalar
        rows: list[tuple[IntArray, FloatArray]] = []
        targets = [pressure_base + k]
        corners = set()

        for corner in CORNERS:
            cls = mp.corner_class(k, corner)
            if cls in on_boundary:
                continue
            i = space.velocity.corner_index(corner)
            corners.add(i)
            for comp in (0, 1):
                rows.append((np.array([i + comp * n]), np.ones(1)))
                targets.append(2 * corner_number[cls] + comp)

        if per_edge:
            for side in sorted(space.interface_sides):
                ordinal, sign = edge_of[(k, side)]
                weights = edge_weights(
                    mp.patches[k], space, side, sign if variant == "cn" else None
                )
                idx = space.velocity.side_indices(side)
                keep = ~np.isin(idx, space.scalar_eliminated)
                if variant == "ce":
                    for comp in (0, 1):
                        rows.append((idx[keep] + comp * n, weights[comp][keep]))
                        targets.append(edge_base + 2 * ordinal + comp)
                else:
                    cols = np.concatenate((idx[keep], idx[keep] + n))
                    vals = np.concatenate((weights[0][keep], weights[1][keep]))
                    rows.append((cols, vals))
                    targets.append(edge_base + ordinal)

        def triplets() -> Iterator[tuple[int, int, float]]:
            for r, (cols, vals) in enumerate(rows):
                for col, val in zip(gamma_positions(space, cols), vals):
                    yield r, int(col), float(val)

        C_v.append(_triplet_matrix(list(triplets()), (len(rows), space.gamma.size)))
        R_C.append(
            sp.csr_matrix(
                (np.ones(len(targets)), (np.arange(len(targets)), targets)),
                shape=(len(targets), pressure_base + len(spaces)),
            )
        )
        corner_dofs.append(frozenset(corners))

    n_primal = pressure_base + len(spaces)
    logger.debug(
        "primal variant %s: %d corner, %d edge and %d pressure primal dofs",
        variant,
        edge_base,
        pressure_base - edge_base,
        len(spaces),
    )
    return PrimalConstraints(
        variant,
        tuple(C_v),
        tuple(np.asarray(m, dtype=float) for m in moments),
        tuple(R_C),
        n_primal,
        tuple(range(pressure_base, n_primal)),
        tuple(corner_dofs),
    )


@dataclass(frozen=True)
class JumpOperator:
    """Signed boolean matrices B_Gamma^(k) acting on u_Gamma^(k)."""

    blocks: tuple[sp.csr_matrix, ...]

    @property
    def n_multipliers(self) -> int:
        return self.blocks[0].shape[0] if self.blocks else 0

    def apply(self, u_gamma: Sequence[FloatArray]) -> FloatArray:
        return sum((b @ u for b, u in zip(self.blocks, u_gamma)), np.zeros(self.n_multipliers))


def build_jump_operator(
    dof_map: InterfaceDofMap,
    primal: PrimalConstraints,
    spaces: Sequence[TaylorHoodPatchSpace],
) -> JumpOperator:
    """One row per matched non-primal pair and velocity component."""
    entries: list[list[tuple[int, int, float]]] = [[] for _ in spaces]
    row = 0
    for pairs in dof_map.pairs:
        itf = pairs.interface
        ka, kb = itf.patch_a, itf.patch_b
        sa, sb = spaces[ka], spaces[kb]
        keep = np.array(
            [
                ia not in primal.corner_dofs[ka] and ib not in primal.corner_dofs[kb]
                for ia, ib in zip(pairs.a, pairs.b)
            ],
            dtype=bool,
        )
        for comp in (0, 1):
            pos_a = gamma_positions(sa, pairs.a[keep] + comp * sa.n_scalar)
            pos_b = gamma_positions(sb, pairs.b[keep] + comp * sb.n_scalar)
            for pa, pb in zip(pos_a, pos_b):
                entries[ka].append((row, int(pa), 1.0))
                entries[kb].append((row, int(pb), -1.0))
                row += 1

    def block(k: int) -> sp.csr_matrix:
        return _triplet_matrix(entries[k], (row, spaces[k].gamma.size))

    logger.debug("jump operator with %d multipliers", row)
    return JumpOperator(tuple(block(k) for k in range(len(spaces))))


def multiplicity_scaling(
    dof_map: InterfaceDofMap,
    spaces: Sequence[TaylorHoodPatchSpace],
    primal: PrimalConstraints,
) -> list[FloatArray]:
    """Diagonal of D^(k) on u_Gamma^(k): the number of patches sharing each dof."""
    shared = [np.ones(s.n_scalar, dtype=np.int64) for s in spaces]
    for pairs in dof_map.pairs:
        np.add.at(shared[pairs.interface.patch_a], pairs.a, 1)
        np.add.at(shared[pairs.interface.patch_b], pairs.b, 1)

    def iterator() -> Iterator[FloatArray]:
        for k, space in enumerate(spaces):
            counts = shared[k][space.scalar_gamma]
            corner = np.isin(space.scalar_gamma, list(primal.corner_dofs[k]))
            bad = (counts != 2) & ~corner
            if bad.any():
                dof = int(space.scalar_gamma[np.argmax(bad)])
                raise MultiplicityError(
                    f"patch {k}: dof {dof} is shared by {int(counts[np.argmax(bad)])} "
                    "patches and is not primal"
                )
            yield np.full(space.gamma.size, 2.0)

    return list(iterator())
