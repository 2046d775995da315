import numpy as np
import pytest

from src.ietistokes.errors import (
    ConformityError,
    DomainError,
    GeometryError,
    GeometryParseError,
)
from src.ietistokes.geometry import (
    YETI_ASSET,
    Interface,
    MultiPatch,
    bilinear_patch,
    initial_refinement,
    load_multipatch,
    parse_multipatch,
    quarter_annulus,
    save_multipatch,
    side_length,
    unit_square,
    yeti_rules,
)

UNIT = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]

# right patch runs from x=2 back to x=1 and from y=1 down to y=0
REVERSED_PAIR = """\
MULTIPATCH v1
# two unit squares meeting at x = 1
PATCH 0 DEG 1 1 DIM 2 2
KNOTS_U 0 0 1 1
KNOTS_V 0 0 1 1
CP 0 0
CP 1 0
CP 0 1
CP 1 1
PATCH 1 DEG 1 1 DIM 2 2
KNOTS_U 0 0 1 1
KNOTS_V 0 0 1 1
CP 2 1
CP 1 1
CP 2 0
CP 1 0
"""

BROKEN_CP = """\
MULTIPATCH v1
PATCH 0 DEG 1 1 DIM 2 2
KNOTS_U 0 0 1 1
KNOTS_V 0 0 1 1
CP 0 0
CP 1 oops
CP 0 1
CP 1 1
"""


def test_single_patch():
    mp = unit_square(1)
    assert mp.n_patches == 1
    assert mp.interfaces == ()
    assert len(mp.boundary) == 4
    assert len(mp.corner_classes) == 4
    x = mp.patches[0].evaluate(np.array([0.3]), np.array([0.7]))
    assert np.allclose(x, [[0.3, 0.7]])


def test_unit_square_topology():
    mp = unit_square(2)
    assert mp.n_patches == 4
    assert len(mp.interfaces) == 4
    assert len(mp.boundary) == 8
    assert len(mp.corner_classes) == 9
    assert sorted(len(c) for c in mp.corner_classes) == [1, 1, 1, 1, 2, 2, 2, 2, 4]
    assert len(mp.boundary_vertex_classes()) == 8
    for itf in mp.interfaces:
        assert not itf.reversed
    # patch 0 is the lower left square
    assert mp.boundary_sides(0) == {0, 2}
    assert mp.interface_sides(0) == {1, 3}
    assert mp.dirichlet_corners(0) == {0, 1, 2}


def test_unit_square_patch_count():
    assert unit_square(8).n_patches == 64
    assert len(unit_square(8).interfaces) == 2 * 8 * 7


def test_quarter_annulus_is_exact():
    mp = quarter_annulus(1, 1)
    rng = np.random.default_rng(0)
    u, v = rng.uniform(0, 1, 20), rng.uniform(0, 1, 20)
    x = mp.patches[0].evaluate(u, v)
    assert np.allclose(np.hypot(x[:, 0], x[:, 1]), 1.0 + u, atol=1e-12)
    assert np.all(x >= -1e-14)


def test_quarter_annulus_topology():
    mp = quarter_annulus(8, 8)
    assert mp.n_patches == 64
    assert len(mp.interfaces) == 2 * 8 * 7
    assert len(mp.boundary) == 4 * 8
    assert side_length(mp.patches[0], 2) == pytest.approx(1.0 / 8)
    outer = quarter_annulus(1, 1).patches[0]
    assert side_length(outer, 1) == pytest.approx(np.pi)


def test_quarter_annulus_invalid():
    with pytest.raises(DomainError):
        quarter_annulus(1, 1, r_in=2.0, r_out=1.0)
    with pytest.raises(DomainError):
        quarter_annulus(0, 2)


def test_translated_patch_has_no_interface():
    left = bilinear_patch(UNIT)
    right = bilinear_patch(np.array(UNIT) + [2.0, 0.0])
    mp = MultiPatch.from_patches([left, right])
    assert mp.interfaces == ()
    assert len(mp.boundary) == 8


def test_reversed_interface():
    mp = MultiPatch.from_patches(parse_multipatch(REVERSED_PAIR))
    assert mp.interfaces == (Interface(0, 1, 1, 1, reversed=True),)
    t = np.linspace(0, 1, 7)
    itf = mp.interfaces[0]
    xa = mp.patches[0].trace(itf.side_a, t)
    xb = mp.patches[1].trace(itf.side_b, itf.sigma(t))
    assert np.allclose(xa, xb)


def test_save_and_load(tmp_path):
    mp = quarter_annulus(2, 2)
    path = tmp_path / "annulus.txt"
    save_multipatch(mp, path)
    loaded = load_multipatch(path)
    assert loaded.n_patches == 4
    assert loaded.interfaces == mp.interfaces
    assert loaded.boundary == mp.boundary
    assert loaded.corner_classes == mp.corner_classes
    for a, b in zip(mp.patches, loaded.patches):
        assert a.rational and b.rational
        assert np.array_equal(a.control_points, b.control_points)


def test_parse_errors():
    with pytest.raises(GeometryParseError) as e:
        parse_multipatch("PATCHES v2\n")
    assert e.value.line_no == 1

    with pytest.raises(GeometryParseError) as e:
        parse_multipatch(BROKEN_CP)
    assert e.value.line_no == 6

    with pytest.raises(GeometryParseError):
        parse_multipatch(BROKEN_CP.replace("DIM 2 2", "DIM 3 2"))


def test_degenerate_patch():
    flat = bilinear_patch([[0.0, 0.0], [1.0, 0.0], [0.0, 0.0], [1.0, 0.0]])
    with pytest.raises(GeometryError):
        MultiPatch.from_patches([flat])


def test_initial_refinement():
    mp = unit_square(2)
    refinement = initial_refinement(mp)
    assert refinement.at_level(3, 2) == (4, 4)
    with pytest.raises(ConformityError):
        initial_refinement(mp, {0: (2, 1)})


def test_yeti_footprint():
    mp = load_multipatch(YETI_ASSET)
    assert mp.n_patches == 84
    rules = yeti_rules(mp)
    assert len(rules) == 8
    assert set(rules.values()) == {(1, 2)}
    refinement = initial_refinement(mp, rules)
    assert refinement.at_level(0, 1) == (2, 4)
    # interior sole patch under the third toe: both upper corners are on the boundary
    assert mp.boundary_sides(66) == set()
    assert mp.dirichlet_corners(66) == {2, 3}
