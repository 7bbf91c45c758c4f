import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ridgelab.constructions import (
    Disk,
    OvershootProfile,
    Reference,
    base_fields_defect,
    cone_pl,
    cone_pl_mass,
    cone_u,
    convex_family,
    family_grid,
    fixture_vRH,
    make_profile,
    matching_M,
    no_bc_family,
    nonconvex_family,
    ridge_base_coefficients,
    ridge_base_fields,
    superposed_cones,
)
from ridgelab.convex import is_discrete_convex
from ridgelab.energy import hessian_eigs
from ridgelab.errors import ConstructionError, ParameterError
from ridgelab.geom import ma_atoms, subdifferential
from ridgelab.solver import DisclinationMeasure


@pytest.fixture(scope="module")
def two_atoms():
    mu = DisclinationMeasure.from_arrays([[-0.4, 0.0], [0.4, 0.0]], [2.0, 2.0])
    return Disk(), mu, Reference(Disk(), mu)


# ---------------------------------------------------------------- profiles


@pytest.mark.parametrize("alpha,beta", [(-1.0, 1.0), (-0.3, 0.9), (0.2, 0.5), (-2.0, -0.5)])
def test_profile_matching_condition(alpha, beta):
    e = np.array([1.0, 0.0])
    prof = make_profile((0.0, alpha), (0.0, beta), e)
    assert prof.alpha == pytest.approx(alpha)
    assert prof.M == pytest.approx(matching_M(beta - alpha), rel=1e-12)
    assert abs(prof.matching_residual()) < 1e-10 * (beta - alpha)


def test_profile_is_convex_c2_and_above_W():
    prof = make_profile((0.0, -0.7), (0.0, 0.4), (1.0, 0.0))
    t = np.linspace(-3 * prof.M, 3 * prof.M, 4001)
    w, W = prof.w(t), prof.W(t)
    assert np.all(w >= W - 1e-14)
    assert np.all(prof.d2w(t) >= -1e-14)
    # value and slope match the two-slope profile at +-M
    for s in (-1, 1):
        assert prof.w(s * prof.M) == pytest.approx(prof.W(s * prof.M), abs=1e-14)
        assert prof.dw(s * prof.M) == pytest.approx(prof.dW(s * prof.M), abs=1e-14)
    assert prof.d2w(t).max() == pytest.approx(prof.max_curvature, rel=1e-4)


def test_profile_numerical_derivative():
    prof = make_profile((0.0, -0.5), (0.0, 0.5), (1.0, 0.0))
    t = np.linspace(-prof.M, prof.M, 101)[1:-1]
    d = 1e-6
    assert np.allclose((prof.w(t + d) - prof.w(t - d)) / (2 * d), prof.dw(t), atol=1e-8)


def test_symmetric_slopes_give_even_profile():
    prof = make_profile((0.0, -0.8), (0.0, 0.8), (1.0, 0.0))
    t = np.linspace(0, 2 * prof.M, 50)
    assert np.allclose(prof.w(t), prof.w(-t), atol=1e-14)


def test_profile_rejects_equal_or_concave_slopes():
    with pytest.raises(ParameterError):
        make_profile((0.1, 0.2), (0.1, 0.2), (1.0, 0.0))
    with pytest.raises(ParameterError):
        make_profile((0.0, 1.0), (0.0, -1.0), (1.0, 0.0))


def test_profile_direction_convention():
    # rotating the ridge by 90 degrees rotates which component is seen
    prof = make_profile((-0.5, 0.0), (0.5, 0.0), (0.0, -1.0))
    assert prof.alpha == pytest.approx(-0.5)
    assert prof.beta == pytest.approx(0.5)


def test_overshoot_profile_balance():
    G = OvershootProfile.solve()
    assert G.c > 0
    assert abs(G.energy_balance()) < 1e-10
    t = np.linspace(-1.5, 1.5, 3001)
    assert np.allclose(G.G(t)[np.abs(t) >= 1], np.abs(t)[np.abs(t) >= 1])
    assert G.dG(t).max() > 1.0  # overshoot: not convex
    assert G.d2G(t).min() < 0
    for s in (-1.0, 1.0):
        assert G.G(s) == pytest.approx(1.0, abs=1e-13)
        assert G.dG(s) == pytest.approx(s, abs=1e-13)
        assert G.d2G(s) == pytest.approx(0.0, abs=1e-12)
    assert np.allclose(G.G(t), G.G(-t))


# ---------------------------------------------------------------- base fields


@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2))
def test_base_fields_solve_membrane_equation(A1, A2, A3):
    assert base_fields_defect(A1, A2, A3) <= 1e-12 * (1 + A1 * A1 + A2 * A2 + A3 * A3)


def test_base_coefficients_relations():
    A4, A5, A6, A7, A8 = ridge_base_coefficients(0.3, -0.7, 1.1)
    assert -2 * A4 == pytest.approx(0.3 ** 2)
    assert -A5 == pytest.approx(0.3 * -0.7)
    assert -2 * A6 == pytest.approx(0.49)
    assert -A7 == pytest.approx(0.3 * 1.1)
    assert -2 * A8 == pytest.approx(1.21)


def test_base_fields_continuous_across_ridge():
    u0, w0 = ridge_base_fields(0.3, -0.7, 1.1)
    x = np.array([[0.4, 0.0], [0.4, 1e-15], [0.4, -1e-15]])
    assert np.allclose(u0(x), u0(x)[0], atol=1e-14)
    assert np.allclose(w0(x), w0(x)[0], atol=1e-14)


# ---------------------------------------------------------------- cone fixtures


@pytest.mark.parametrize("eps", [0.5, 0.2, 0.05])
def test_cone_u_closed_form(eps):
    rng = np.random.default_rng(3)
    X = rng.uniform(-1, 1, size=(2000, 2))
    u = cone_u(X, eps)
    # 1-homogeneous, even in each variable, continuous at the cone boundary
    assert np.allclose(cone_u(2.5 * X, eps), 2.5 * u)
    assert np.allclose(cone_u(X * [-1, 1], eps), u)
    assert np.allclose(cone_u(X * [1, -1], eps), u)
    edge = np.array([[1.0, eps], [1.0, eps * (1 - 1e-12)]])
    assert cone_u(edge, eps)[0] == pytest.approx(cone_u(edge, eps)[1], abs=1e-11)


def test_cone_pl_masses_exact():
    for k in (16, 64, 256):
        m = ma_atoms(cone_pl(Fraction(1, 2), k))
        assert len(m) == 1
        assert m.atoms[0].point == (0, 0)
        assert m.total == Fraction(2, 3) - Fraction(8, 3 * k * k)
        assert float(m.total) == pytest.approx(cone_pl_mass(0.5, k))


def test_cone_pl_rejects_odd_k():
    with pytest.raises(ParameterError):
        cone_pl(0.5, 15)


def test_vRH_subdifferential_and_value():
    R, H = Fraction(1, 4), Fraction(1, 2)
    v = fixture_vRH(R, H)
    assert v((R, 0)) == R - H - 1
    assert v((0, 0)) == -1
    cell = subdifferential(v, (R, 0))
    F = Fraction
    assert set(cell.polygon) == {(-1, 0), (0, F(-5, 4)), (0, F(5, 4)), (F(5, 3), 0)}
    (atom,) = ma_atoms(v).atoms
    assert atom.mass == F(10, 3)


def test_vRH_parameter_range():
    with pytest.raises(ParameterError):
        fixture_vRH(Fraction(1, 2), Fraction(1, 4))


# ---------------------------------------------------------------- disk reference


def test_disk_reference_matches_polygon_lift(two_atoms):
    _, _, ref = two_atoms
    rng = np.random.default_rng(0)
    X = rng.uniform(-1, 1, size=(5000, 2))
    X = X[np.hypot(*X.T) < 0.995]
    # inscribed 1024-gon: O(1/m^2) discrepancy
    assert np.abs(ref(X) - ref.pl(X)).max() < 2e-5
    assert np.allclose(ref(ref.points), ref.heights, atol=1e-12)
    circle = np.column_stack([np.cos(np.linspace(0, 6, 40)), np.sin(np.linspace(0, 6, 40))])
    assert np.abs(ref(circle)).max() < 1e-12


def test_disk_reference_ridge_is_symmetric(two_atoms):
    _, _, ref = two_atoms
    (r,) = ref.ridges.ridges
    assert r.p_plus[1] == pytest.approx(-r.p_minus[1], abs=1e-12)
    assert abs(r.p_plus[0]) < 1e-12


def test_disk_reference_is_convex_along_lines(two_atoms):
    _, _, ref = two_atoms
    rng = np.random.default_rng(5)
    for _ in range(50):
        a, b = rng.uniform(-0.7, 0.7, size=(2, 2))
        t = np.linspace(0, 1, 201)[:, None]
        z = ref(a + t * (b - a))
        assert np.all(z[:-2] - 2 * z[1:-1] + z[2:] >= -1e-12)


# ---------------------------------------------------------------- families


def test_family_grid_policy():
    g = family_grid(Disk(), 2 ** -6, nodes_per_layer=8)
    assert g.spacing == pytest.approx((2 ** -6) ** (2 / 3) / 8)
    with pytest.raises(ConstructionError):
        family_grid(Disk(), 2 ** -14, max_nodes=1025)


def test_convex_family_invariants(two_atoms):
    dom, mu, ref = two_atoms
    h = 2 ** -6
    out = convex_family(dom, mu, h, reference=ref, solve=False)
    eps = h ** (2 / 3)
    # centered Hessians see kinks of v0 at the atoms as indefinite, so test second differences
    assert is_discrete_convex(out.v)
    _, hi = hessian_eigs(out.v)
    inner = out.v.mask & (np.hypot(*(out.v.points().T)).T < 0.9)
    # curvature bounded by C / eps
    assert hi[inner].max() * eps < 50
    # equals v0 away from the ridge and the atoms
    P = out.v.points()
    far = out.v.mask & (np.abs(P[..., 1]) > 0.5)
    # the exact ridge planes agree with v0 up to rounding
    assert np.abs(out.v.values[far] - out.v0.values[far]).max() < 1e-12


def test_convex_family_rejects_large_h(two_atoms):
    dom, mu, ref = two_atoms
    with pytest.raises(ConstructionError):
        convex_family(dom, mu, 2 ** -3, reference=ref, solve=False)


def test_nonconvex_family_is_indefinite_and_local(two_atoms):
    dom, mu, ref = two_atoms
    out = nonconvex_family(dom, mu, 2 ** -6, reference=ref, solve=False)
    assert out.metadata["indefinite_nodes"] > 0
    P = out.v.points()
    far = out.v.mask & (np.abs(P[..., 1]) > 0.5)
    assert np.array_equal(out.v.values[far], out.v0.values[far])


def test_nonconvex_below_convex_energy(two_atoms):
    dom, mu, ref = two_atoms
    h = 2 ** -7
    Ec = convex_family(dom, mu, h, reference=ref).energy().total
    En = nonconvex_family(dom, mu, h, reference=ref).energy().total
    assert En < Ec


def test_superposed_cones_mass_scaling():
    mu = DisclinationMeasure.from_arrays([[0.0, 0.0]], [1.5])
    eps = 0.3
    X = np.array([[0.5, 0.0], [0.0, 0.5]])
    v = superposed_cones(X, mu, (1.0, 0.0), eps)
    amp = math.sqrt(3 * 1.5 / (4 * eps))
    assert v[1] == pytest.approx(amp * 0.5)
    assert v[0] == pytest.approx(amp * eps * 0.25)


def test_no_bc_family_smoke(two_atoms):
    dom, mu, ref = two_atoms
    out = no_bc_family(dom, mu, 2 ** -6, reference=ref, solve=False)
    e = np.array(out.metadata["direction"])
    assert abs(np.linalg.norm(e) - 1) < 1e-12
    assert out.metadata["eps_cone"] > 0
