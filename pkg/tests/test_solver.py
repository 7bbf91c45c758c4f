import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ridgelab.errors import ConvergenceError, DomainError, ParameterError
from ridgelab.geom import ConvexPolygon, ma_atoms, subdifferential
from ridgelab.solver import (
    DisclinationMeasure,
    RidgeSet,
    extract_ridges,
    initial_heights,
    solve_mad,
    stability_probe,
)

DISK = ConvexPolygon.regular(256)


def _inscribed_area(m: int) -> float:
    return m / 2 * math.sin(2 * math.pi / m)


def test_single_centered_atom():
    mu = DisclinationMeasure.from_arrays([[0.0, 0.0]], [math.pi])
    v, rep = solve_mad(DISK, mu)
    assert rep.converged
    assert rep.residual <= 1e-10
    assert rep.iterations <= 30
    assert rep.heights[0] == pytest.approx(-1.0, abs=1e-3)
    # exact on the 256-gon: edge gradients are |h| n_k / cos(pi/m), an inscribed m-gon of that radius
    a = math.cos(math.pi / 256)
    assert rep.heights[0] == pytest.approx(-a * math.sqrt(math.pi / _inscribed_area(256)), rel=1e-9)


def test_initial_heights_exact_for_centered_atom_on_disk_like_polygon():
    mu = DisclinationMeasure.from_arrays([[0.0, 0.0]], [math.pi])
    h0 = initial_heights(DISK, mu)
    assert h0[0] == pytest.approx(-math.cos(math.pi / 256), rel=1e-12)


@pytest.mark.parametrize("sigmas", [[1.0, 1.0], [2.0, 0.5], [0.3, 1.7]])
def test_two_atoms_match_masses(sigmas):
    mu = DisclinationMeasure.from_arrays([[-0.4, 0.0], [0.4, 0.1]], sigmas)
    v, rep = solve_mad(DISK, mu)
    m = ma_atoms(v)
    assert len(m) == 2
    got = {tuple(np.round(p, 12)): w for p, w in zip(m.points, m.masses)}
    for p, s in zip(mu.points, mu.sigmas):
        assert got[tuple(np.round(p, 12))] == pytest.approx(s, abs=1e-9)
    # boundary values are zero
    V = DISK.as_array()
    assert np.abs(v(V)).max() < 1e-12


@settings(max_examples=20, deadline=None)
@given(
    st.lists(
        st.tuples(st.floats(-0.6, 0.6), st.floats(-0.6, 0.6), st.floats(0.2, 2.0)),
        min_size=1,
        max_size=4,
        unique_by=lambda t: (round(t[0], 1), round(t[1], 1)),
    )
)
def test_random_measures_solve(atoms):
    pts = np.array([[a, b] for a, b, _ in atoms])
    d = np.hypot(*(pts[:, None] - pts[None]).transpose(2, 0, 1)) + np.eye(len(pts))
    if d.min() < 0.05:
        return
    mu = DisclinationMeasure.from_arrays(pts, [s for *_, s in atoms])
    poly = ConvexPolygon.regular(64)
    v, rep = solve_mad(poly, mu)
    assert rep.residual <= 1e-10
    assert np.all(np.array(rep.heights) < 0)
    assert float(ma_atoms(v).total) == pytest.approx(float(mu.sigmas.sum()), rel=1e-9)


def test_empty_measure_gives_zero():
    v, rep = solve_mad(DISK, DisclinationMeasure(()))
    assert len(v.supports) == 1 and rep.iterations == 0


def test_atom_on_boundary_rejected():
    mu = DisclinationMeasure.from_arrays([[1.0, 0.0]], [1.0])
    with pytest.raises(DomainError):
        solve_mad(DISK, mu)


def test_bad_tolerance_rejected():
    with pytest.raises(ParameterError):
        solve_mad(DISK, DisclinationMeasure.from_arrays([[0, 0]], [1.0]), tol=0)


def test_iteration_budget_raises_with_best_iterate():
    mu = DisclinationMeasure.from_arrays([[-0.4, 0.0], [0.4, 0.1], [0.0, 0.5]], [1.0, 2.0, 0.5])
    with pytest.raises(ConvergenceError) as exc:
        solve_mad(DISK, mu, max_iter=0)
    assert exc.value.exit_code == 3


@pytest.mark.parametrize(
    "pts,sig",
    [([[0, 0], [0, 0]], [1, 1]), ([[0, 0]], [0.0]), ([[0, 0]], [-1.0]), ([[0, 0]], [float("inf")])],
)
def test_measure_validation(pts, sig):
    with pytest.raises(ParameterError):
        DisclinationMeasure.from_arrays(pts, sig)


def test_measure_json_round_trip():
    mu = DisclinationMeasure.from_arrays([[-0.4, 0.0], [0.4, 0.0]], [2.0, 1.5])
    assert DisclinationMeasure.from_json(json.loads(json.dumps(mu.to_json()))) == mu


# ---------------------------------------------------------------- ridges


def test_single_atom_has_no_ridges():
    mu = DisclinationMeasure.from_arrays([[0.0, 0.0]], [1.0])
    v, _ = solve_mad(DISK, mu)
    assert len(extract_ridges(v, mu)) == 0


def test_symmetric_pair_has_one_symmetric_ridge():
    mu = DisclinationMeasure.from_arrays([[-0.4, 0.0], [0.4, 0.0]], [2.0, 2.0])
    v, _ = solve_mad(DISK, mu)
    rs = extract_ridges(v, mu)
    assert rs.pairs() == [(0, 1)]
    (r,) = rs.ridges
    assert r.p_plus[0] == pytest.approx(0, abs=1e-9)
    assert r.p_plus[1] == pytest.approx(-r.p_minus[1], abs=1e-9)
    assert r.b_plus[1] > 0 > r.b_minus[1]
    # interior ridge points have the segment [p-, p+] as subdifferential
    cell = subdifferential(v, (0.1, 0.0))
    assert cell.dim == 1
    assert cell.contains(r.p_plus, tol=1e-9) and cell.contains(r.p_minus, tol=1e-9)


def test_ridge_rhombus_lies_in_flanking_cells():
    mu = DisclinationMeasure.from_arrays([[-0.4, 0.0], [0.4, 0.1]], [2.0, 0.7])
    v, _ = solve_mad(DISK, mu)
    (r,) = extract_ridges(v, mu).ridges
    for b, p in ((r.b_plus, r.p_plus), (r.b_minus, r.p_minus)):
        q = 0.5 * (np.array(b) + 0.5 * (mu.points[0] + mu.points[1]))
        assert subdifferential(v, tuple(q)).polygon == (p,)


def test_three_atoms_every_atom_on_a_ridge():
    mu = DisclinationMeasure.from_arrays([[-0.4, -0.2], [0.4, -0.2], [0.0, 0.45]], [1.0, 1.3, 0.8])
    v, _ = solve_mad(DISK, mu)
    rs = extract_ridges(v, mu)
    seen = {k for p in rs.pairs() for k in p}
    assert seen == {0, 1, 2}


def test_ridge_set_json_round_trip():
    mu = DisclinationMeasure.from_arrays([[-0.4, 0.0], [0.4, 0.0]], [2.0, 2.0])
    v, _ = solve_mad(DISK, mu)
    rs = extract_ridges(v, mu)
    assert RidgeSet.from_json(json.loads(json.dumps(rs.to_json()))) == rs


# ---------------------------------------------------------------- stability


def test_stability_probe_identical_measures():
    mu = DisclinationMeasure.from_arrays([[-0.3, 0.0], [0.3, 0.2]], [1.0, 1.0])
    p = stability_probe(ConvexPolygon.regular(64), mu, mu)
    assert p.gap < 1e-9 and p.budget == 0


def test_stability_probe_bound():
    poly = ConvexPolygon.regular(128)
    mu = DisclinationMeasure.from_arrays([[-0.3, 0.0], [0.3, 0.2]], [1.0, 1.0])
    nu = mu.with_sigmas([1.4, 0.6])
    p = stability_probe(poly, mu, nu)
    assert p.gap <= poly.diameter / math.sqrt(math.pi) * p.budget


def test_stability_requires_shared_atoms():
    mu = DisclinationMeasure.from_arrays([[0.0, 0.0]], [1.0])
    nu = DisclinationMeasure.from_arrays([[0.1, 0.0]], [1.0])
    with pytest.raises(ParameterError):
        stability_probe(DISK, mu, nu)
