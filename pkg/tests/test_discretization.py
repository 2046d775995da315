import numpy as np
import pytest

from src.ietistokes.discretization import (
    assemble_local,
    build_spaces,
    dirichlet_lift,
    interpolate_side,
    patch_errors,
    pressure_moments,
    taylor_hood_space,
)
from src.ietistokes.errors import GeometryError
from src.ietistokes.geometry import (
    YETI_ASSET,
    bilinear_patch,
    initial_refinement,
    load_multipatch,
    quarter_annulus,
    unit_square,
    yeti_rules,
)
from src.ietistokes.splines import basis_matrices

UNIT = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]
PARALLELOGRAM = [[0.0, 0.0], [2.0, 0.0], [0.5, 1.0], [2.5, 1.0]]

# 1D mass and stiffness matrices of the quadratic Bernstein polynomials on [0, 1]
MASS = np.array([[6.0, 3.0, 1.0], [3.0, 4.0, 3.0], [1.0, 3.0, 6.0]]) / 30
STIFFNESS = np.array([[4.0, -2.0, -2.0], [-2.0, 4.0, -2.0], [-2.0, -2.0, 4.0]]) / 3


def zero_rhs(x):
    return np.zeros((x.shape[0], 2))


def test_space_dimensions():
    space = taylor_hood_space(2, (4, 4))
    assert space.velocity.shape == (10, 10)
    assert space.pressure.shape == (6, 6)
    assert space.degree == 2
    assert space.n_velocity == 200
    assert np.array_equal(
        space.velocity.factors[0].breaks, space.pressure.factors[0].breaks
    )


def test_index_partition():
    mp = unit_square(2)
    spaces = build_spaces(mp, initial_refinement(mp), 1, 2)
    for space in spaces:
        parts = np.concatenate((space.eliminated, space.gamma, space.interior))
        assert np.array_equal(np.sort(parts), np.arange(space.n_velocity))
        assert np.array_equal(space.retained, np.sort(np.concatenate((space.gamma, space.interior))))

    # patch 0: Dirichlet on sides 0 and 2, interface sides 1 and 3
    space = spaces[0]
    nu, nv = space.velocity.shape
    assert space.scalar_eliminated.size == nu + nv - 1
    assert space.scalar_gamma.size == nu + nv - 3


def test_boundary_vertex_without_boundary_side():
    mp = load_multipatch(YETI_ASSET)
    spaces = build_spaces(mp, initial_refinement(mp, yeti_rules(mp)), 0, 2)
    velocity = spaces[66].velocity
    assert spaces[66].dirichlet_sides == frozenset()
    assert list(spaces[66].scalar_eliminated) == [
        velocity.corner_index(2),
        velocity.corner_index(3),
    ]


def test_single_patch_eliminates_boundary_layer():
    space = taylor_hood_space(2, (4, 4), dirichlet_sides=(0, 1, 2, 3))
    assert space.scalar_eliminated.size == 10 * 10 - 8 * 8
    assert space.gamma.size == 0


def test_stiffness_matches_tensor_product():
    space = taylor_hood_space(1, (1, 1))
    system = assemble_local(bilinear_patch(UNIT), space, zero_rhs)
    expected = np.kron(MASS, STIFFNESS) + np.kron(STIFFNESS, MASS)
    n = space.n_scalar
    assert np.allclose(system.K[:n, :n].toarray(), expected, atol=1e-12)
    assert system.K[:n, n:].nnz == 0


def test_stiffness_symmetry_and_kernel():
    mp = quarter_annulus(1, 1)
    space = taylor_hood_space(2, (2, 2))
    system = assemble_local(mp.patches[0], space, zero_rhs)
    K = system.K.toarray()
    assert np.array_equal(K, K.T)
    n = space.n_scalar
    for comp in (0, 1):
        const = np.zeros(space.n_velocity)
        const[comp * n : (comp + 1) * n] = 1.0
        assert np.abs(K @ const).max() <= 1e-10 * np.abs(K).max()
    assert system.D.shape == (space.n_pressure, space.n_velocity)


def test_divergence_free_field():
    patch = bilinear_patch(PARALLELOGRAM)
    space = taylor_hood_space(2, (2, 2))
    system = assemble_local(patch, space, zero_rhs)
    kv_u, kv_v = space.velocity.factors
    gu, gv = np.meshgrid(kv_u.greville(), kv_v.greville())
    x = patch.evaluate(gu.ravel(), gv.ravel())
    # linear rotation field (y, -x), reproduced exactly by Greville coefficients
    u = np.concatenate((x[:, 1], -x[:, 0]))
    assert np.abs(system.D @ u).max() <= 1e-12
    expanding = np.concatenate((x[:, 0], x[:, 1]))
    assert np.abs(system.D @ expanding).max() > 1e-3


def test_pressure_moments():
    space = taylor_hood_space(2, (2, 2))
    moments = pressure_moments(bilinear_patch(UNIT), space)
    assert moments.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(moments > 0)
    scaled = pressure_moments(bilinear_patch(np.array(UNIT) * 2.0), space)
    assert np.allclose(scaled, 4.0 * moments)


def test_quarter_annulus_area():
    mp = quarter_annulus(1, 1)
    space = taylor_hood_space(4, (16, 16))
    assert pressure_moments(mp.patches[0], space).sum() == pytest.approx(
        3 * np.pi / 4, abs=1e-10
    )


def test_degenerate_patch_is_reported():
    flat = bilinear_patch([[0.0, 0.0], [1.0, 0.0], [0.0, 0.0], [1.0, 0.0]])
    with pytest.raises(GeometryError) as e:
        assemble_local(flat, taylor_hood_space(2, (1, 1)), zero_rhs, patch_index=3)
    assert e.value.patch == 3


def test_side_interpolation_converges():
    patch = bilinear_patch(UNIT)
    t = np.linspace(0.0, 1.0, 201)

    def g(x):
        return np.column_stack((np.sin(np.pi * x[:, 0]), np.exp(x[:, 0])))

    def error(elements):
        space = taylor_hood_space(2, (elements, elements))
        coefs = interpolate_side(patch, space, 2, g)
        B = basis_matrices(space.velocity.side_factor(2), t)[0]
        return np.abs(B @ coefs - g(patch.trace(2, t))).max()

    coarse, fine = error(2), error(4)
    assert fine < coarse / 6
    space = taylor_hood_space(2, (2, 2))
    coefs = interpolate_side(patch, space, 2, g)
    assert np.allclose(coefs[0], g(patch.trace(2, np.array([0.0])))[0])


def test_lift_of_zero_data():
    mp = unit_square(2)
    spaces = build_spaces(mp, initial_refinement(mp), 1, 2)

    def rhs(x):
        return np.column_stack((np.ones(x.shape[0]), x[:, 1]))

    systems = [assemble_local(mp.patches[k], spaces[k], rhs, k) for k in range(4)]
    lifts, lifted = dirichlet_lift(mp, systems, zero_rhs)
    for lift, before, after in zip(lifts, systems, lifted):
        assert not lift.any()
        assert np.array_equal(before.f, after.f)
        assert not after.g.any()


def test_lift_of_constant_data():
    mp = unit_square(2)
    spaces = build_spaces(mp, initial_refinement(mp), 1, 2)
    systems = [assemble_local(mp.patches[k], spaces[k], zero_rhs, k) for k in range(4)]

    def g(x):
        return np.tile([1.0, -2.0], (x.shape[0], 1))

    lifts, _ = dirichlet_lift(mp, systems, g)
    for lift, space in zip(lifts, spaces):
        n = space.n_scalar
        assert np.allclose(lift[space.scalar_eliminated], 1.0)
        assert np.allclose(lift[space.scalar_eliminated + n], -2.0)
        assert not lift[space.retained].any()


def test_errors_of_interpolated_field():
    patch = bilinear_patch(UNIT)
    space = taylor_hood_space(2, (2, 2))
    n = space.n_scalar
    u = np.concatenate((np.full(n, 3.0), np.zeros(n)))
    p = np.full(space.n_pressure, 0.5)

    def velocity(x):
        return np.column_stack((np.full(x.shape[0], 3.0), np.zeros(x.shape[0])))

    def pressure(x):
        return np.zeros(x.shape[0])

    eu, ep = patch_errors(patch, space, u, p, velocity, pressure)
    assert eu == pytest.approx(0.0, abs=1e-20)
    assert ep == pytest.approx(0.25)
