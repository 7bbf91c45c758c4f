import json
from fractions import Fraction as F

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ridgelab.errors import DomainError, EvaluationError, GeometryError, PreconditionError
from ridgelab.geom import (
    AffineSupport,
    AtomicMeasure,
    ConvexPolygon,
    PLConvexFunction,
    affine,
    evaluate,
    first_moment,
    gradient_hull_area,
    ma_atoms,
    ma_integral,
    pyramid,
    subdifferential,
    translate,
)
from ridgelab.hull import shoelace


SQUARE = ConvexPolygon.box(F(-1), F(-1), F(1), F(1))


def test_polygon_canonical_form():
    a = ConvexPolygon(((1, 0), (0, 1), (-1, 0), (0, -1)))
    b = ConvexPolygon(((0, -1), (-1, 0), (0, 1), (1, 0)))  # clockwise input
    assert a == b
    assert a.area == 2


def test_polygon_drops_collinear_vertices():
    p = ConvexPolygon(((0, 0), (1, 0), (2, 0), (2, 2), (0, 2)))
    assert p.n == 4


@pytest.mark.parametrize(
    "verts",
    [
        ((0, 0), (1, 0), (2, 0)),
        ((0, 0), (2, 0), (1, 1), (2, 2), (0, 2)),
        ((0, 0), (1, 0), (float("nan"), 1)),
    ],
)
def test_polygon_rejects_bad_input(verts):
    with pytest.raises(GeometryError):
        ConvexPolygon(verts)


def test_polygon_contains_exact_boundary():
    assert SQUARE.contains((F(1), F(0)))
    assert not SQUARE.contains((F(1), F(0)), strict=True)
    assert SQUARE.contains((F(1, 2), F(-1, 3)), strict=True)
    assert not SQUARE.contains((F(1, 1) + F(1, 10**9), F(0)))


def test_regular_polygon_area():
    m = 256
    P = ConvexPolygon.regular(m)
    assert float(P.area) == pytest.approx(m / 2 * np.sin(2 * np.pi / m), rel=1e-13)


def test_boundary_distance():
    assert SQUARE.boundary_distance((0.25, 0.5)) == pytest.approx(0.5)


# ---------------------------------------------------------------- pyramid oracle


def test_pyramid_single_atom_exact():
    u = pyramid(SQUARE)
    m = ma_atoms(u)
    assert len(m) == 1
    (a,) = m.atoms
    assert a.point == (0, 0)
    assert a.mass == 2
    assert isinstance(a.mass, F)


def test_pyramid_subdifferentials():
    u = pyramid(SQUARE)
    assert subdifferential(u, (F(0), F(0))).area == 2
    edge = subdifferential(u, (F(1, 2), F(1, 2)))
    assert edge.dim == 1
    assert set(edge.polygon) == {(1, 0), (0, 1)}
    face = subdifferential(u, (F(1, 2), F(1, 10)))
    assert face.polygon == ((1, 0),)


def test_evaluate_outside_domain():
    with pytest.raises(DomainError):
        evaluate(pyramid(SQUARE), (F(2), F(0)))


def test_pyramid_vectorized_matches_exact():
    u = pyramid(SQUARE)
    X = np.random.default_rng(0).uniform(-1, 1, size=(200, 2))
    assert np.allclose(u(X), np.abs(X).max(axis=1) - 1)


def test_supports_without_cells_are_dropped():
    sup = [AffineSupport((1, 0), -1), AffineSupport((-1, 0), -1), AffineSupport((0, 0), -5)]
    u = PLConvexFunction(SQUARE, sup)
    assert len(u.supports) == 2
    assert len(ma_atoms(u)) == 0


def test_affine_has_no_mass():
    u = affine(SQUARE, (F(1, 3), F(2)), F(5))
    assert ma_atoms(u).total == 0
    assert gradient_hull_area(u) == 0


def test_empty_supports_rejected():
    with pytest.raises(PreconditionError):
        PLConvexFunction(SQUARE, [])


# ---------------------------------------------------------------- random exact functions


@st.composite
def rational_pl(draw):
    k = draw(st.integers(3, 7))
    q = st.fractions(min_value=-3, max_value=3, max_denominator=7)
    sup = [AffineSupport((draw(q), draw(q)), draw(q)) for _ in range(k)]
    return PLConvexFunction(SQUARE, sup)


@settings(max_examples=60, deadline=None)
@given(rational_pl())
def test_total_mass_at_most_gradient_hull(u):
    # interior atoms can only see part of the gradient image
    assert 0 <= ma_atoms(u).total <= gradient_hull_area(u)


@settings(max_examples=60, deadline=None)
@given(rational_pl())
def test_atom_masses_are_subdifferential_areas(u):
    for a in ma_atoms(u).atoms:
        assert subdifferential(u, a.point).area == a.mass


@settings(max_examples=60, deadline=None)
@given(rational_pl())
def test_cells_tile_the_domain(u):
    assert sum(c.area for c in u.cells) == SQUARE.area


@settings(max_examples=40, deadline=None)
@given(rational_pl(), st.fractions(-1, 1, max_denominator=5), st.fractions(-1, 1, max_denominator=5))
def test_translation_moves_atoms(u, tx, ty):
    v = translate(u, (tx, ty))
    a = ma_atoms(u)
    b = ma_atoms(v)
    assert [x.mass for x in a.atoms] == [x.mass for x in b.atoms]
    assert [(x.point[0] + tx, x.point[1] + ty) for x in a.atoms] == [x.point for x in b.atoms]


def test_ma_integral_and_first_moment():
    sup = [AffineSupport(p, -1 - p[0] * F(1, 4)) for p in ((1, 0), (-1, 0), (0, 1), (0, -1))]
    u = PLConvexFunction(SQUARE, sup)
    assert ma_integral(u, lambda x: 1) == 2
    assert first_moment(u) == (F(1, 2), 0)
    with pytest.raises(EvaluationError):
        ma_integral(u, lambda x: float("inf"))


def test_json_round_trip():
    u = pyramid(ConvexPolygon.box(-1.0, -1.0, 1.0, 1.0), depth=0.5)
    v = PLConvexFunction.from_json(json.loads(u.dumps()))
    assert v == u


def test_atomic_measure_validation():
    with pytest.raises(PreconditionError):
        AtomicMeasure((((0, 0), 1), ((0, 0), 2)))
    with pytest.raises(PreconditionError):
        AtomicMeasure((((0, 0), -1),))


def test_shoelace_orientation():
    sq = [(0, 0), (1, 0), (1, 1), (0, 1)]
    assert shoelace(sq) == 1
    assert shoelace(sq[::-1]) == -1
