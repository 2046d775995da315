"""Patch parameterizations, multi-patch topology and the geometry file format."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from . import FloatArray
from .errors import (
    ConformityError,
    DomainError,
    GeometryError,
    GeometryParseError,
    IetiStokesError,
    NonMatchingInterfaceError,
)
from .splines import (
    CORNER_PARAMETERS,
    CORNER_SIDES,
    CORNERS,
    SIDES,
    KnotVector,
    TensorSplineSpace,
    basis_matrices,
)

logger = logging.getLogger(__name__)

ASSETS = Path(__file__).parent / "assets"
YETI_ASSET = ASSETS / "yeti_footprint.txt"

MATCH_SAMPLES = 20
MATCH_TOL = 1e-10
COINCIDENCE_REL_TOL = 1e-8


def side_parameters(side: int, t: FloatArray) -> tuple[FloatArray, FloatArray]:
    """Parameter-domain points (u, v) of `side` at edge parameters `t`."""
    t = np.asarray(t, dtype=float)
    if side == 0:
        return np.zeros_like(t), t
    if side == 1:
        return np.ones_like(t), t
    if side == 2:
        return t, np.zeros_like(t)
    if side == 3:
        return t, np.ones_like(t)
    raise ValueError(f"invalid side {side}")


@dataclass(frozen=True, eq=False)
class GeometryMap:
    """Spline (optionally rational) map G_k from [0,1]^2 to the physical patch.

    Control points are stored in flat order i + j * nu.
    """

    space: TensorSplineSpace
    control_points: FloatArray
    weights: FloatArray | None = None

    def __post_init__(self) -> None:
        cps = np.array(self.control_points, dtype=float).reshape(-1, 2)
        if cps.shape[0] != self.space.dimension:
            raise ValueError(
                f"expected {self.space.dimension} control points, got {cps.shape[0]}"
            )
        object.__setattr__(self, "control_points", cps)
        if self.weights is not None:
            w = np.array(self.weights, dtype=float).ravel()
            if w.shape[0] != cps.shape[0] or np.any(w <= 0.0):
                raise ValueError("weights must be positive, one per control point")
            object.__setattr__(self, "weights", w)

    @property
    def rational(self) -> bool:
        return self.weights is not None

    def _weights(self) -> FloatArray:
        if self.weights is None:
            return np.ones(self.control_points.shape[0])
        return self.weights

    def _map(self, u: FloatArray, v: FloatArray, grid: bool) -> tuple[FloatArray, FloatArray]:
        nu, nv = self.space.shape
        bu = basis_matrices(self.space.factors[0], u, 1)
        bv = basis_matrices(self.space.factors[1], v, 1)
        w = self._weights().reshape(nv, nu)
        wp = w[..., None] * self.control_points.reshape(nv, nu, 2)

        pts = "ai,bj,jic->abc" if grid else "ai,aj,jic->ac"
        wts = "ai,bj,ji->ab" if grid else "ai,aj,ji->a"
        a = np.einsum(pts, bu[0], bv[0], wp)
        a_u = np.einsum(pts, bu[1], bv[0], wp)
        a_v = np.einsum(pts, bu[0], bv[1], wp)
        wsum = np.einsum(wts, bu[0], bv[0], w)[..., None]
        w_u = np.einsum(wts, bu[1], bv[0], w)[..., None]
        w_v = np.einsum(wts, bu[0], bv[1], w)[..., None]

        x = a / wsum
        dx_du = (a_u - x * w_u) / wsum
        dx_dv = (a_v - x * w_v) / wsum
        # jac[..., i, k] = d x_i / d xi_k
        return x, np.stack((dx_du, dx_dv), axis=-1)

    def evaluate(self, u: FloatArray, v: FloatArray) -> FloatArray:
        """Physical points for parameter arrays u, v of equal length."""
        return self._map(np.atleast_1d(u), np.atleast_1d(v), grid=False)[0]

    def jacobian(self, u: FloatArray, v: FloatArray) -> FloatArray:
        return self._map(np.atleast_1d(u), np.atleast_1d(v), grid=False)[1]

    def evaluate_grid(self, u: FloatArray, v: FloatArray) -> tuple[FloatArray, FloatArray]:
        """Points (Nu, Nv, 2) and Jacobians (Nu, Nv, 2, 2) on the tensor grid u x v."""
        return self._map(np.asarray(u, dtype=float), np.asarray(v, dtype=float), grid=True)

    def trace(self, side: int, t: FloatArray) -> FloatArray:
        u, v = side_parameters(side, np.atleast_1d(t))
        return self.evaluate(u, v)

    def corner_point(self, corner: int) -> FloatArray:
        u, v = CORNER_PARAMETERS[corner]
        return self.evaluate(np.array([u]), np.array([v]))[0]

    def check_jacobian(self, patch: int = 0, samples: int = 8) -> None:
        """Raise GeometryError unless det(grad G) keeps one sign on a sample grid."""
        t = (np.arange(samples) + 0.5) / samples
        _, jac = self.evaluate_grid(t, t)
        det = np.linalg.det(jac)
        scale = np.abs(det).max()
        bad = np.abs(det) <= 1e-12 * max(scale, 1e-300)
        if not bad.any() and (np.all(det > 0) or np.all(det < 0)):
            return
        if bad.any():
            a, b = np.argwhere(bad)[0]
        else:
            signs = np.sign(det)
            a, b = np.argwhere(signs != signs.flat[0])[0]
        raise GeometryError(patch, (float(t[a]), float(t[b])), float(det[a, b]))


@dataclass(frozen=True)
class Interface:
    """Shared edge between side_a of patch_a and side_b of patch_b.

    `reversed` is set when the two edge parameterizations run in opposite directions.
    """

    patch_a: int
    side_a: int
    patch_b: int
    side_b: int
    reversed: bool = False

    def sigma(self, t: FloatArray) -> FloatArray:
        return 1.0 - t if self.reversed else t


@dataclass(frozen=True)
class MultiPatch:
    patches: tuple[GeometryMap, ...]
    interfaces: tuple[Interface, ...]
    boundary: tuple[tuple[int, int], ...]
    corner_classes: tuple[tuple[tuple[int, int], ...], ...]
    _corner_class_of: dict[tuple[int, int], int] = field(
        default_factory=dict, repr=False, compare=False
    )

    def __post_init__(self) -> None:
        lookup = {m: c for c, members in enumerate(self.corner_classes) for m in members}
        object.__setattr__(self, "_corner_class_of", lookup)

    @property
    def n_patches(self) -> int:
        return len(self.patches)

    @property
    def diameter(self) -> float:
        pts = np.vstack([g.control_points for g in self.patches])
        return float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0)))

    def corner_class(self, patch: int, corner: int) -> int:
        return self._corner_class_of[(patch, corner)]

    def boundary_sides(self, patch: int) -> set[int]:
        return {s for k, s in self.boundary if k == patch}

    def interface_sides(self, patch: int) -> set[int]:
        sides = set()
        for itf in self.interfaces:
            if itf.patch_a == patch:
                sides.add(itf.side_a)
            if itf.patch_b == patch:
                sides.add(itf.side_b)
        return sides

    def boundary_vertex_classes(self) -> set[int]:
        """Corner classes whose physical vertex lies on the domain boundary."""
        on_boundary = set()
        for patch, side in self.boundary:
            for corner, sides in CORNER_SIDES.items():
                if side in sides:
                    on_boundary.add(self.corner_class(patch, corner))
        return on_boundary

    def dirichlet_corners(self, patch: int) -> set[int]:
        on_boundary = self.boundary_vertex_classes()
        return {c for c in CORNERS if self.corner_class(patch, c) in on_boundary}

    def validate(self, samples: int = MATCH_SAMPLES, tol: float = MATCH_TOL) -> None:
        """Check the topology invariants; raise on the first violation."""
        seen: dict[tuple[int, int], int] = {}
        for itf in self.interfaces:
            for key in ((itf.patch_a, itf.side_a), (itf.patch_b, itf.side_b)):
                seen[key] = seen.get(key, 0) + 1
        for key in self.boundary:
            seen[key] = seen.get(key, 0) + 1
        for k in range(self.n_patches):
            for s in SIDES:
                if seen.get((k, s), 0) != 1:
                    raise IetiStokesError(
                        f"side {s} of patch {k} appears {seen.get((k, s), 0)} times in topology"
                    )

        t = np.linspace(0.0, 1.0, samples)
        scale = max(1.0, self.diameter)
        for itf in self.interfaces:
            xa = self.patches[itf.patch_a].trace(itf.side_a, t)
            xb = self.patches[itf.patch_b].trace(itf.side_b, itf.sigma(t))
            gap = float(np.abs(xa - xb).max())
            if gap > tol * scale:
                raise NonMatchingInterfaceError(
                    f"interface {itf} curves differ by {gap:.3e}"
                )

        for members in self.corner_classes:
            pts = np.array([self.patches[k].corner_point(c) for k, c in members])
            if np.abs(pts - pts[0]).max() > tol * scale:
                raise NonMatchingInterfaceError(f"corner class {members} is not one point")

    @classmethod
    def from_patches(
        cls, patches: Iterable[GeometryMap], rel_tol: float = COINCIDENCE_REL_TOL
    ) -> MultiPatch:
        """Reconstruct interfaces, boundary and corner classes by point coincidence."""
        patches = tuple(patches)
        pts = np.vstack([g.control_points for g in patches])
        diameter = float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0)))
        tol = rel_tol * max(diameter, 1e-300)

        keys = [(k, s) for k in range(len(patches)) for s in SIDES]
        probes = np.array([[0.0, 0.5, 1.0]] * len(keys))
        samples = np.array(
            [patches[k].trace(s, probes[n]) for n, (k, s) in enumerate(keys)]
        )  # (S, 3, 2)

        interfaces: list[Interface] = []
        matched: set[int] = set()
        for a, (ka, sa) in enumerate(keys):
            if a in matched:
                continue
            for b in range(a + 1, len(keys)):
                kb, sb = keys[b]
                if b in matched or kb == ka:
                    continue
                same = _close(samples[a, 0], samples[b, 0], tol) and _close(
                    samples[a, 2], samples[b, 2], tol
                )
                flipped = _close(samples[a, 0], samples[b, 2], tol) and _close(
                    samples[a, 2], samples[b, 0], tol
                )
                if not (same or flipped):
                    continue
                if not _close(samples[a, 1], samples[b, 1], tol):
                    raise NonMatchingInterfaceError(
                        f"sides ({ka}, {sa}) and ({kb}, {sb}) share end points "
                        "but not the curve between them"
                    )
                interfaces.append(Interface(ka, sa, kb, sb, reversed=not same))
                matched.update((a, b))
                break

        boundary = tuple(key for n, key in enumerate(keys) if n not in matched)

        corner_keys = [(k, c) for k in range(len(patches)) for c in CORNERS]
        corner_pts = np.array([patches[k].corner_point(c) for k, c in corner_keys])
        dist = np.linalg.norm(corner_pts[:, None, :] - corner_pts[None, :, :], axis=-1)
        rows, cols = np.nonzero(dist <= tol)
        graph = coo_matrix((np.ones(rows.size), (rows, cols)), shape=dist.shape)
        _, labels = connected_components(graph, directed=False)
        order: dict[int, list[tuple[int, int]]] = {}
        for key, label in zip(corner_keys, labels):
            order.setdefault(int(label), []).append(key)
        corner_classes = tuple(tuple(members) for members in order.values())

        mp = cls(tuple(patches), tuple(interfaces), boundary, corner_classes)
        for k, g in enumerate(patches):
            g.check_jacobian(k)
        mp.validate()
        logger.debug(
            "reconstructed topology: %d patches, %d interfaces, %d boundary sides",
            len(patches),
            len(interfaces),
            len(boundary),
        )
        return mp


def _close(x: FloatArray, y: FloatArray, tol: float) -> bool:
    return bool(np.linalg.norm(x - y) <= tol)


_LINEAR = KnotVector(1, np.array([0.0, 0.0, 1.0, 1.0]))
_QUADRATIC = KnotVector(2, np.array([0.0, 0.0, 0.0, 1.0, 1.0, 1.0]))


def bilinear_patch(corners: FloatArray) -> GeometryMap:
    """Bilinear patch through the corners (0,0), (1,0), (0,1), (1,1) of the parameter square."""
    return GeometryMap(TensorSplineSpace((_LINEAR, _LINEAR)), np.asarray(corners, dtype=float))


def unit_square(n: int) -> MultiPatch:
    """n x n grid of square patches tiling [0,1]^2; patch i + j*n covers column i, row j."""
    if n < 1:
        raise DomainError(f"need at least one patch per direction, got {n}")
    h = 1.0 / n
    patches = [
        bilinear_patch(
            [
                [i * h, j * h],
                [(i + 1) * h, j * h],
                [i * h, (j + 1) * h],
                [(i + 1) * h, (j + 1) * h],
            ]
        )
        for j in range(n)
        for i in range(n)
    ]
    return MultiPatch.from_patches(patches)


def annulus_patch(r0: float, r1: float, theta0: float, theta1: float) -> GeometryMap:
    """Exact annulus sector: linear in the radius (u), rational quadratic arc in the angle (v)."""
    half = (theta1 - theta0) / 2
    mid = theta0 + half
    arc = np.array(
        [
            [np.cos(theta0), np.sin(theta0)],
            [np.cos(mid) / np.cos(half), np.sin(mid) / np.cos(half)],
            [np.cos(theta1), np.sin(theta1)],
        ]
    )
    cps = [r * arc[b] for b in range(3) for r in (r0, r1)]
    weights = [w for w in (1.0, np.cos(half), 1.0) for _ in range(2)]
    return GeometryMap(TensorSplineSpace((_LINEAR, _QUADRATIC)), np.array(cps), np.array(weights))


def quarter_annulus(
    n_r: int, n_t: int, r_in: float = 1.0, r_out: float = 2.0
) -> MultiPatch:
    """n_r x n_t patches covering the quarter annulus; patch i + j*n_r is ring i, sector j."""
    if n_r < 1 or n_t < 1:
        raise DomainError(f"need at least one patch per direction, got {n_r} x {n_t}")
    if not 0.0 < r_in < r_out:
        raise DomainError(f"radii must satisfy 0 < r_in < r_out, got {r_in}, {r_out}")
    radii = np.linspace(r_in, r_out, n_r + 1)
    angles = np.linspace(0.0, np.pi / 2, n_t + 1)
    patches = [
        annulus_patch(radii[i], radii[i + 1], angles[j], angles[j + 1])
        for j in range(n_t)
        for i in range(n_r)
    ]
    return MultiPatch.from_patches(patches)


def yeti_footprint(path: Path = YETI_ASSET) -> MultiPatch:
    return load_multipatch(path)


def side_length(patch: GeometryMap, side: int, n: int = 16) -> float:
    t, w = np.polynomial.legendre.leggauss(n)
    t, w = (t + 1) / 2, w / 2
    u, v = side_parameters(side, t)
    jac = patch.jacobian(u, v)
    tangent = jac[:, :, 1] if side in (0, 1) else jac[:, :, 0]
    return float(np.sum(w * np.linalg.norm(tangent, axis=1)))


@dataclass(frozen=True)
class InitialRefinement:
    """Element counts per patch and direction on level 0."""

    elements: tuple[tuple[int, int], ...]

    def at_level(self, patch: int, level: int) -> tuple[int, int]:
        n_u, n_v = self.elements[patch]
        return n_u * 2**level, n_v * 2**level


def initial_refinement(
    mp: MultiPatch, rules: Mapping[int, tuple[int, int]] | None = None
) -> InitialRefinement:
    """Level-0 element structure; patches missing from `rules` get one element."""
    rules = rules or {}
    elements = []
    for k in range(mp.n_patches):
        n_u, n_v = rules.get(k, (1, 1))
        if n_u < 1 or n_v < 1:
            raise ConformityError(f"patch {k}: element counts must be positive")
        elements.append((int(n_u), int(n_v)))

    def along(k: int, side: int) -> int:
        return elements[k][1] if side in (0, 1) else elements[k][0]

    for itf in mp.interfaces:
        na, nb = along(itf.patch_a, itf.side_a), along(itf.patch_b, itf.side_b)
        if na != nb:
            raise ConformityError(
                f"interface between patch {itf.patch_a} (side {itf.side_a}, {na} elements) "
                f"and patch {itf.patch_b} (side {itf.side_b}, {nb} elements) is not matching"
            )
    return InitialRefinement(tuple(elements))


def yeti_rules(mp: MultiPatch, ratio: float = 2.0) -> dict[int, tuple[int, int]]:
    """Two elements along the longer direction of long and thin patches."""
    rules = {}
    for k, patch in enumerate(mp.patches):
        len_u = (side_length(patch, 2) + side_length(patch, 3)) / 2
        len_v = (side_length(patch, 0) + side_length(patch, 1)) / 2
        if len_u >= ratio * len_v:
            rules[k] = (2, 1)
        elif len_v >= ratio * len_u:
            rules[k] = (1, 2)
    return rules


def _format(x: float) -> str:
    return f"{x:.17g}"


def dump_multipatch(mp: MultiPatch) -> Iterator[str]:
    yield "MULTIPATCH v1"
    for k, g in enumerate(mp.patches):
        kv_u, kv_v = g.space.factors
        nu, nv = g.space.shape
        flag = " RATIONAL" if g.rational else ""
        yield f"PATCH {k} DEG {kv_u.degree} {kv_v.degree} DIM {nu} {nv}{flag}"
        yield "KNOTS_U " + " ".join(_format(x) for x in kv_u.knots)
        yield "KNOTS_V " + " ".join(_format(x) for x in kv_v.knots)
        weights = g._weights()
        for n, (x, y) in enumerate(g.control_points):
            w = f" {_format(weights[n])}" if g.rational else ""
            yield f"CP {_format(x)} {_format(y)}{w}"


def save_multipatch(mp: MultiPatch, path: Path) -> None:
    with open(path, "w") as f:
        for line in dump_multipatch(mp):
            f.write(line + "\n")


def parse_multipatch(text: str) -> list[GeometryMap]:
    """Patches described by a MULTIPATCH v1 document."""
    lines = [
        (n, line.split("#", 1)[0].split())
        for n, line in enumerate(text.splitlines(), start=1)
    ]
    lines = [(n, tokens) for n, tokens in lines if tokens]
    if not lines or lines[0][1] != ["MULTIPATCH", "v1"]:
        raise GeometryParseError(lines[0][0] if lines else 1, "missing 'MULTIPATCH v1' header")

    patches: list[GeometryMap] = []
    pos = 1
    while pos < len(lines):
        line_no, tokens = lines[pos]
        if tokens[0] != "PATCH":
            raise GeometryParseError(line_no, f"expected PATCH, got {tokens[0]}")
        try:
            if tokens[2] != "DEG" or tokens[5] != "DIM":
                raise ValueError
            pu, pv = int(tokens[3]), int(tokens[4])
            nu, nv = int(tokens[6]), int(tokens[7])
        except (IndexError, ValueError):
            raise GeometryParseError(
                line_no, "expected 'PATCH <id> DEG <pu> <pv> DIM <nu> <nv> [RATIONAL]'"
            )
        rational = len(tokens) > 8 and tokens[8] == "RATIONAL"

        knots = []
        for offset, (name, degree, dim) in enumerate((("KNOTS_U", pu, nu), ("KNOTS_V", pv, nv))):
            if pos + 1 + offset >= len(lines):
                raise GeometryParseError(line_no, f"missing {name}")
            k_no, k_tokens = lines[pos + 1 + offset]
            if k_tokens[0] != name:
                raise GeometryParseError(k_no, f"expected {name}")
            try:
                kv = KnotVector(degree, np.array([float(x) for x in k_tokens[1:]]))
            except (ValueError, IetiStokesError) as e:
                raise GeometryParseError(k_no, str(e))
            if kv.dimension != dim:
                raise GeometryParseError(
                    k_no, f"{name} defines {kv.dimension} functions, DIM says {dim}"
                )
            knots.append(kv)

        cps, weights = [], []
        start = pos + 3
        for c_no, c_tokens in lines[start : start + nu * nv]:
            if c_tokens[0] != "CP" or len(c_tokens) != (4 if rational else 3):
                raise GeometryParseError(c_no, "malformed CP line")
            try:
                cps.append([float(c_tokens[1]), float(c_tokens[2])])
                if rational:
                    weights.append(float(c_tokens[3]))
            except ValueError:
                raise GeometryParseError(c_no, "malformed number")
        if len(cps) != nu * nv:
            raise GeometryParseError(line_no, f"expected {nu * nv} CP lines, got {len(cps)}")

        try:
            patches.append(
                GeometryMap(
                    TensorSplineSpace((knots[0], knots[1])),
                    np.array(cps),
                    np.array(weights) if rational else None,
                )
            )
        except ValueError as e:
            raise GeometryParseError(line_no, str(e))
        pos = start + nu * nv
    return patches


def load_multipatch(path: Path) -> MultiPatch:
    with open(path, "r") as f:
        text = f.read()
    return MultiPatch.from_patches(parse_multipatch(text))
