"""Univariate and tensor-product B-spline spaces on the parameter domain [0, 1].

Basis evaluation follows the triangular Cox-de Boor recursion with derivative
accumulation, vectorized over all points that share a knot span.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import FloatArray, IntArray
from .errors import InvalidKnotVectorError, InvalidSmoothnessError, OutOfDomainError

# Patch sides: 0 -> u=0, 1 -> u=1, 2 -> v=0, 3 -> v=1.
# Corners: 0 -> (0,0), 1 -> (1,0), 2 -> (0,1), 3 -> (1,1).
SIDES = (0, 1, 2, 3)
CORNERS = (0, 1, 2, 3)

# Corners at the start (t=0) and the end (t=1) of each side
SIDE_CORNERS: dict[int, tuple[int, int]] = {0: (0, 2), 1: (1, 3), 2: (0, 1), 3: (2, 3)}
# Sides meeting in each corner
CORNER_SIDES: dict[int, tuple[int, int]] = {0: (0, 2), 1: (1, 2), 2: (0, 3), 3: (1, 3)}
CORNER_PARAMETERS: dict[int, tuple[float, float]] = {
    0: (0.0, 0.0),
    1: (1.0, 0.0),
    2: (0.0, 1.0),
    3: (1.0, 1.0),
}


@dataclass(frozen=True, eq=False)
class KnotVector:
    """Open (clamped) knot vector on [0, 1] together with a spline degree."""

    degree: int
    knots: FloatArray

    def __post_init__(self) -> None:
        knots = np.array(self.knots, dtype=float)
        knots.setflags(write=False)
        object.__setattr__(self, "knots", knots)

        p = self.degree
        if p < 1:
            raise InvalidKnotVectorError(f"degree must be at least 1, got {p}")
        if knots.ndim != 1 or knots.size < 2 * (p + 1):
            raise InvalidKnotVectorError("too few knots for the given degree")
        if np.any(np.diff(knots) < 0):
            raise InvalidKnotVectorError("knots must be nondecreasing")
        if np.any(knots[: p + 1] != 0.0) or np.any(knots[-p - 1 :] != 1.0):
            raise InvalidKnotVectorError(
                "knot vector must be open on [0, 1] (end knots repeated degree+1 times)"
            )
        interior = knots[p + 1 : -p - 1]
        if interior.size:
            if interior[0] <= 0.0 or interior[-1] >= 1.0:
                raise InvalidKnotVectorError("end knots repeated more than degree+1 times")
            _, counts = np.unique(interior, return_counts=True)
            if counts.max() > p:
                raise InvalidKnotVectorError(
                    f"interior knot multiplicity {counts.max()} exceeds degree {p}"
                )

    def __repr__(self) -> str:  # pragma: no cover
        return f"KnotVector(degree={self.degree}, knots={self.knots.tolist()})"

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, KnotVector):
            return NotImplemented
        return self.degree == other.degree and np.array_equal(self.knots, other.knots)

    def __hash__(self) -> int:
        return hash((self.degree, self.knots.tobytes()))

    @property
    def dimension(self) -> int:
        return self.knots.size - self.degree - 1

    @property
    def breaks(self) -> FloatArray:
        """Element break points (knots without repetitions)."""
        return np.unique(self.knots)

    @property
    def n_elements(self) -> int:
        return self.breaks.size - 1

    def spans(self, t: FloatArray) -> IntArray:
        """Knot span index s with knots[s] <= t < knots[s+1] (t=1 in the last span)."""
        s = np.searchsorted(self.knots, t, side="right") - 1
        return np.clip(s, self.degree, self.dimension - 1).astype(np.int64)

    def greville(self) -> FloatArray:
        """Greville abscissae, one per basis function."""
        p = self.degree
        g = np.convolve(self.knots, np.ones(p) / p)[p:-p]
        # averaging may round a hair outside the support
        return np.clip(g, 0.0, 1.0)

    def refine(self, multiplicity: int = 1) -> KnotVector:
        """Uniform refinement: insert every element midpoint `multiplicity` times."""
        b = self.breaks
        mids = np.repeat((b[1:] + b[:-1]) / 2, multiplicity)
        return KnotVector(self.degree, np.sort(np.concatenate((self.knots, mids))))


def make_knots(degree: int, smoothness: int, elements: int) -> KnotVector:
    """Open knot vector with `elements` uniform elements and C^smoothness interior knots."""
    if not 0 <= smoothness < degree:
        raise InvalidSmoothnessError(
            f"smoothness must satisfy 0 <= smoothness < degree, got {smoothness} for degree {degree}"
        )
    if elements < 1:
        raise InvalidKnotVectorError(f"need at least one element, got {elements}")
    interior = np.arange(1, elements) / elements
    knots = np.concatenate(
        (
            np.zeros(degree + 1),
            np.repeat(interior, degree - smoothness),
            np.ones(degree + 1),
        )
    )
    return KnotVector(degree, knots)


def make_space(degree: int, smoothness: int, level: int) -> KnotVector:
    """Spline space S_{degree,smoothness} on 2^level uniform elements."""
    if level < 0:
        raise InvalidKnotVectorError(f"level must be nonnegative, got {level}")
    return make_knots(degree, smoothness, 2**level)


def _basis_derivatives(
    knots: FloatArray, p: int, span: int, t: FloatArray, n: int
) -> FloatArray:
    """Values and derivatives up to order n of the p+1 functions active in `span`.

    Returns an array of shape (n+1, len(t), p+1).
    """
    m = t.shape[0]
    ndu = np.empty((p + 1, p + 1, m))
    left = np.empty((p + 1, m))
    right = np.empty((p + 1, m))
    ndu[0, 0] = 1.0
    for j in range(1, p + 1):
        left[j] = t - knots[span + 1 - j]
        right[j] = knots[span + j] - t
        saved = np.zeros(m)
        for r in range(j):
            # lower triangle keeps knot differences
            ndu[j, r] = right[r + 1] + left[j - r]
            temp = ndu[r, j - 1] / ndu[j, r]
            ndu[r, j] = saved + right[r + 1] * temp
            saved = left[j - r] * temp
        ndu[j, j] = saved

    ders = np.zeros((n + 1, p + 1, m))
    ders[0] = ndu[:, p]

    a = np.empty((2, p + 1, m))
    for r in range(p + 1):
        s1, s2 = 0, 1
        a[0, 0] = 1.0
        for k in range(1, n + 1):
            d = np.zeros(m)
            rk, pk = r - k, p - k
            if r >= k:
                a[s2, 0] = a[s1, 0] / ndu[pk + 1, rk]
                d = a[s2, 0] * ndu[rk, pk]
            j1 = 1 if rk >= -1 else -rk
            j2 = k - 1 if r - 1 <= pk else p - r
            for j in range(j1, j2 + 1):
                a[s2, j] = (a[s1, j] - a[s1, j - 1]) / ndu[pk + 1, rk + j]
                d = d + a[s2, j] * ndu[rk + j, pk]
            if r <= pk:
                a[s2, k] = -a[s1, k - 1] / ndu[pk + 1, r]
                d = d + a[s2, k] * ndu[r, pk]
            ders[k, r] = d
            s1, s2 = s2, s1

    factor = p
    for k in range(1, n + 1):
        ders[k] *= factor
        factor *= p - k

    return ders.transpose(0, 2, 1)


@dataclass(frozen=True)
class ActiveBasis:
    """The degree+1 basis functions active at one parameter.

    `values[d, a]` is the d-th derivative of function `indices[a]`.
    """

    indices: IntArray
    values: FloatArray


def eval_basis(kv: KnotVector, t: float, max_deriv: int = 0) -> ActiveBasis:
    """Evaluate the active basis functions and their derivatives at `t`."""
    if not 0.0 <= t <= 1.0:
        raise OutOfDomainError(f"parameter {t} outside [0, 1]")
    if not 0 <= max_deriv <= kv.degree:
        raise ValueError(f"max_deriv must be in [0, {kv.degree}], got {max_deriv}")
    span = int(kv.spans(np.array([t]))[0])
    values = _basis_derivatives(kv.knots, kv.degree, span, np.array([float(t)]), max_deriv)
    first = span - kv.degree
    return ActiveBasis(
        indices=np.arange(first, first + kv.degree + 1, dtype=np.int64),
        values=values[:, 0, :],
    )


def basis_matrices(kv: KnotVector, t: FloatArray, max_deriv: int = 0) -> FloatArray:
    """Dense collocation matrices of all basis functions and derivatives.

    Returns an array of shape (max_deriv+1, len(t), dimension).
    """
    t = np.asarray(t, dtype=float)
    if t.size and (t.min() < 0.0 or t.max() > 1.0):
        raise OutOfDomainError("evaluation points outside [0, 1]")
    max_deriv = min(max_deriv, kv.degree)
    p = kv.degree
    out = np.zeros((max_deriv + 1, t.size, kv.dimension))
    spans = kv.spans(t)
    for span in np.unique(spans):
        idx = np.nonzero(spans == span)[0]
        cols = np.arange(span - p, span + 1)
        vals = _basis_derivatives(kv.knots, p, int(span), t[idx], max_deriv)
        for d in range(max_deriv + 1):
            out[d][np.ix_(idx, cols)] = vals[d]
    return out


def greville_points(kv: KnotVector) -> FloatArray:
    return kv.greville()


@dataclass(frozen=True, eq=False)
class TensorSplineSpace:
    """Tensor product of two univariate spaces; flat index = i + j * nu."""

    factors: tuple[KnotVector, KnotVector]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TensorSplineSpace):
            return NotImplemented
        return self.factors == other.factors

    def __hash__(self) -> int:
        return hash(self.factors)

    @property
    def shape(self) -> tuple[int, int]:
        return self.factors[0].dimension, self.factors[1].dimension

    @property
    def dimension(self) -> int:
        nu, nv = self.shape
        return nu * nv

    def index(self, i: int, j: int) -> int:
        return i + j * self.shape[0]

    def multi_index(self, flat: int) -> tuple[int, int]:
        nu = self.shape[0]
        return flat % nu, flat // nu

    def side_factor(self, side: int) -> KnotVector:
        """Univariate space along the given side."""
        return self.factors[1] if side in (0, 1) else self.factors[0]

    def side_indices(self, side: int) -> IntArray:
        """Flat indices of the functions with nonzero trace on `side`, ordered along the side."""
        nu, nv = self.shape
        if side == 0:
            return np.arange(nv, dtype=np.int64) * nu
        if side == 1:
            return np.arange(nv, dtype=np.int64) * nu + nu - 1
        if side == 2:
            return np.arange(nu, dtype=np.int64)
        if side == 3:
            return np.arange(nu, dtype=np.int64) + (nv - 1) * nu
        raise ValueError(f"invalid side {side}")

    def corner_index(self, corner: int) -> int:
        nu, nv = self.shape
        i = 0 if corner in (0, 2) else nu - 1
        j = 0 if corner in (0, 1) else nv - 1
        return self.index(i, j)

    def evaluate(self, u: float, v: float, max_deriv: int = 1) -> tuple[IntArray, FloatArray]:
        """Active tensor functions at (u, v).

        Returns flat indices and an array `values[k]` with k = 0 (value),
        1 (d/du), 2 (d/dv) when max_deriv >= 1.
        """
        bu = eval_basis(self.factors[0], u, min(max_deriv, 1))
        bv = eval_basis(self.factors[1], v, min(max_deriv, 1))
        nu = self.shape[0]
        idx = (bu.indices[:, None] + nu * bv.indices[None, :]).T.ravel()
        vals = [np.outer(bv.values[0], bu.values[0]).ravel()]
        if max_deriv >= 1:
            vals.append(np.outer(bv.values[0], bu.values[1]).ravel())
            vals.append(np.outer(bv.values[1], bu.values[0]).ravel())
        return idx, np.array(vals)
