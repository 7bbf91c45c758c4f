import math
from fractions import Fraction as F

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ridgelab.convex import (
    GridConvexFunction,
    LiftSpec,
    alexandrov_gap_check,
    boundary_lift,
    is_discrete_convex,
    legendre,
    lift,
    lifting_support_check,
    lipschitz_extension,
    smooth_sup,
)
from ridgelab.errors import DomainError, ParameterError, PreconditionError
from ridgelab.geom import AffineSupport, ConvexPolygon, PLConvexFunction, ma_atoms, pyramid
from ridgelab.harness import random_lift_spec

SQUARE = ConvexPolygon.box(F(-1), F(-1), F(1), F(1))


def test_lift_pyramid():
    spec = LiftSpec.on_polygon(SQUARE, 0, [((F(0), F(0)), F(-1))])
    u = lift(spec)
    # the lift is the pyramid max(|x1|, |x2|) - 1
    assert u == pyramid(SQUARE)
    assert ma_atoms(u).total == 2
    assert lifting_support_check(u, spec).ok


def test_lift_tent_between_two_points():
    spec = LiftSpec.on_polygon(SQUARE, 0, [((F(-1, 2), F(0)), F(-1)), ((F(1, 2), F(0)), F(-1))])
    u = lift(spec)
    m = ma_atoms(u)
    assert {a.point for a in m.atoms} == {(F(-1, 2), 0), (F(1, 2), 0)}
    assert lifting_support_check(u, spec).stray_mass == 0


def test_lift_ignores_points_above_the_hull():
    spec = LiftSpec.on_polygon(SQUARE, 0, [((F(0), F(0)), F(-1)), ((F(1, 2), F(1, 2)), F(0))])
    u = lift(spec)
    assert [a.point for a in ma_atoms(u).atoms] == [(0, 0)]


def test_lift_rejects_boundary_interior_point():
    with pytest.raises(DomainError):
        LiftSpec.on_polygon(SQUARE, 0, [((F(1), F(0)), F(-1))])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**6))
def test_random_lifts_charge_only_data_points(seed):
    spec = random_lift_spec(np.random.default_rng(seed), exact=True)
    u = lift(spec)
    chk = lifting_support_check(u, spec)
    assert chk.ok and chk.stray_mass == 0
    # the lift lies below every data value
    for x, v in spec.boundary + spec.interior:
        assert max(s(x) for s in u.supports) <= v


def test_legendre_of_pyramid():
    u = pyramid(SQUARE)
    # u*(p) = max(1, |p1| + |p2|): the apex or a corner of the square
    assert legendre(u, (0, 0)) == 1
    assert legendre(u, (F(1, 2), 0)) == 1
    assert legendre(u, (F(3), F(1))) == 4


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6))
def test_fenchel_young(seed):
    rng = np.random.default_rng(seed)
    u = lift(random_lift_spec(rng, exact=True))
    for _ in range(5):
        p = tuple(F(int(k), 4) for k in rng.integers(-8, 9, size=2))
        x = tuple(F(int(k), 8) for k in rng.integers(-7, 8, size=2))
        ux = max(s(x) for s in u.supports)
        assert legendre(u, p) >= p[0] * x[0] + p[1] * x[1] - ux


def test_boundary_lift_of_pyramid_is_zero():
    u = pyramid(SQUARE)
    L = boundary_lift(u, SQUARE)
    assert all(s.p == (0, 0) and s.c == 0 for s in L.supports)


@pytest.mark.parametrize("k", [F(1), F(1, 3), F(5, 2)])
def test_alexandrov_scaled_pyramid(k):
    u = PLConvexFunction(SQUARE, [AffineSupport((k * a, k * b), -k) for a, b in ((1, 0), (-1, 0), (0, 1), (0, -1))])
    chk = alexandrov_gap_check(u, SQUARE, (F(0), F(0)))
    assert chk.gap == k
    assert chk.mass == pytest.approx(float(2 * k * k))
    assert chk.holds
    # diam * sqrt(2 k^2 / pi) = k * 4 / sqrt(pi)
    assert chk.bound == pytest.approx(float(k) * 4 / math.sqrt(math.pi))


def test_alexandrov_requires_subdomain():
    with pytest.raises(DomainError):
        alexandrov_gap_check(pyramid(SQUARE), ConvexPolygon.box(0, 0, 2, 2), (F(1, 2), F(1, 2)))


# ---------------------------------------------------------------- grid functions


def _grid(fn, n=41, lo=-1.0, hi=1.0):
    d = (hi - lo) / (n - 1)
    return GridConvexFunction.sample(fn, (lo, lo), d, (n, n))


def test_discrete_convexity_detects_sign():
    assert is_discrete_convex(_grid(lambda X: (X**2).sum(-1)))
    assert not is_discrete_convex(_grid(lambda X: -(X**2).sum(-1)))


def test_lipschitz_extension_keeps_mask_values():
    g = _grid(lambda X: np.abs(X).sum(-1))
    mask = np.hypot(*g.points().transpose(2, 0, 1)) < 0.8
    f = GridConvexFunction(g.origin, g.spacing, np.where(mask, g.values, 0.0), mask)
    ext = lipschitz_extension(f, L=1.5)
    assert np.array_equal(ext[mask], f.values[mask])
    assert np.all(ext[~mask] >= f.values[mask].min())


def test_smooth_sup_fixes_flat_enough_input():
    eps = 0.5
    g = _grid(lambda X: 0.3 * (X**2).sum(-1))  # Hessian 0.6 < 1/eps
    out = smooth_sup(g, eps)
    assert np.allclose(out.values, g.values, atol=1e-12)


def test_smooth_sup_properties_on_cone():
    eps = 0.1
    g = _grid(lambda X: np.hypot(X[..., 0], X[..., 1]), n=61)
    out = smooth_sup(g, eps)
    assert np.all(out.values >= g.values - 1e-12)
    assert is_discrete_convex(out)
    # second differences bounded by delta^2 / eps plus discretization slack
    d = g.spacing
    v = out.values
    d2 = np.abs(v[2:, 1:-1] - 2 * v[1:-1, 1:-1] + v[:-2, 1:-1]).max()
    assert d2 <= d * d / eps * 1.1 + 1e-12
    # unchanged at distance >= 4 Lip eps from the apex
    far = np.hypot(*g.points().transpose(2, 0, 1)) >= 4 * eps
    assert np.allclose(out.values[far], g.values[far], atol=1e-12)


def test_smooth_sup_rejects_bad_input():
    g = _grid(lambda X: (X**2).sum(-1))
    with pytest.raises(ParameterError):
        smooth_sup(g, 0.0)
    with pytest.raises(PreconditionError):
        smooth_sup(_grid(lambda X: -(X**2).sum(-1)), 0.1)
