import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import dblquad

from thin2graph.errors import DomainError, GeometryError
from thin2graph.harness import fit_slope
from thin2graph.star_graph import build_star, equal_star
from thin2graph.thin_domain import (
    JUNCTION,
    PotentialSpec,
    build_thin_domain,
    compute_C_V,
    cosine_bump_mass,
    gh_measure_error,
    measure_total,
    potential_V_eps,
    project_f_eps,
    project_points,
    shoelace,
    solve_amplitude,
    validate_potential,
)


def test_straight_auto_junction_is_square(straight):
    spec = build_thin_domain(straight, 0.1, eps0=0.25, l=1.0)
    J = spec.junction
    np.testing.assert_allclose(np.sort(np.abs(J), axis=0), 0.25, atol=1e-15)
    assert shoelace(J) == pytest.approx(4 * 0.25**2 * 1.0, abs=1e-15)


def test_three_star_auto_hexagon():
    G = equal_star(3)
    spec = build_thin_domain(G, 0.1, eps0=0.2, l=2.0)
    assert len(spec.junction) == 6
    assert shoelace(spec.junction) > 0


def test_eps0_gives_reference_domain(star3):
    spec = build_thin_domain(star3, 0.25, eps0=0.25)
    np.testing.assert_array_equal(spec.junction_eps, spec.junction)
    assert measure_total(spec) == pytest.approx(
        (shoelace(spec.junction) + sum(spec.tube_area(j) for j in range(3))) / (2 * 0.25), rel=1e-14)


@pytest.mark.parametrize(
    "kwargs, exc",
    [
        (dict(eps=0.3), DomainError),
        (dict(eps=0.0), DomainError),
        (dict(eps=0.1, l=0.0), DomainError),
        (dict(eps=0.1, eps0=0.25, l=5.0), DomainError),
        (dict(eps=0.1, a=0.5), DomainError),
        (dict(eps=0.1, junction="ROUND"), DomainError),
    ],
)
def test_bad_domain_parameters(star3, kwargs, exc):
    with pytest.raises(exc):
        build_thin_domain(star3, **kwargs)


def test_overlapping_tubes_rejected():
    G = build_star([1, 1], [0.0, 0.2])
    with pytest.raises(GeometryError):
        build_thin_domain(G, 0.1)


def test_single_edge_has_no_auto_junction():
    with pytest.raises(GeometryError):
        build_thin_domain(build_star([1.0], [0.0]), 0.1)


def test_explicit_junction_must_carry_the_mouths(straight):
    square = np.array([[-0.25, -0.25], [0.25, -0.25], [0.25, 0.25], [-0.25, 0.25]])
    spec = build_thin_domain(straight, 0.1, junction=square)
    assert spec.mouth_vertices == ((1, 2), (3, 0))
    with pytest.raises(GeometryError):
        build_thin_domain(straight, 0.1, junction=square * 1.1)


def test_area_and_perimeter(straight):
    spec = build_thin_domain(straight, 0.1)
    assert spec.area == pytest.approx(2 * 0.2, rel=1e-14)
    assert spec.perimeter == pytest.approx(2 * 2 + 2 * 0.2, rel=1e-14)


# --- projection ---------------------------------------------------------------


def test_projection_on_first_tube():
    G = equal_star(3)
    p = project_f_eps((0.5, 0.003), build_thin_domain(G, 0.01))
    assert (p.edge, p.s) == (0, pytest.approx(0.5, abs=1e-15))


def test_projection_of_origin(spec3):
    p = project_f_eps((0.0, 0.0), spec3)
    assert p.edge == JUNCTION and p.s == 0.0


def test_projection_on_reversed_edge(straight):
    p = project_f_eps((-0.25, 0.0), build_thin_domain(straight, 0.1))
    assert p.edge == 1 and p.s == pytest.approx(0.25, abs=1e-15)


def test_projection_in_junction_uses_nearest_star_point(spec3):
    # junction point straight above the first segment, inside J_eps
    p = project_f_eps((0.05, 0.02), spec3)
    assert p.edge == 0 and p.s == pytest.approx(0.05)


def test_projection_rejects_outside_points(spec3):
    with pytest.raises(DomainError):
        project_f_eps((0.5, 0.5), spec3)
    with pytest.raises(DomainError):
        project_f_eps((1.2, 0.0), spec3)


@settings(max_examples=60, deadline=None)
@given(st.floats(0.11, 1.0), st.floats(-0.1, 0.1), st.floats(0.11, 1.0), st.floats(-0.1, 0.1),
       st.integers(0, 2))
def test_projection_is_one_lipschitz_on_tubes(s1, t1, s2, t2, j):
    spec = build_thin_domain(equal_star(3), 0.1)
    R = spec.graph.directions[j]
    x = np.array([R @ [s1, t1], R @ [s2, t2]])
    edge, s = project_points(x, spec)
    assert np.all(edge == j)
    assert abs(s[0] - s[1]) <= np.linalg.norm(x[0] - x[1]) + 1e-12
    assert abs(s[0] - s1) < 1e-12


# --- potential -------------------------------------------------------------------


def test_scaled_potential_values(spec3):
    V = PotentialSpec(v0=3.0)
    assert potential_V_eps([0.0, 0.0], spec3, V) == pytest.approx(30.0)
    assert potential_V_eps([0.081, 0.0], spec3, V) == 0.0
    z0 = np.array([0.3, -0.2])
    assert potential_V_eps(0.1 * z0, spec3, V) == pytest.approx(V(z0) / 0.1, rel=1e-14)


def test_zero_potential_has_zero_coupling():
    assert compute_C_V(PotentialSpec()) == 0.0


def test_cosine_coupling_matches_closed_form():
    V = PotentialSpec(v0=2.5, rho=0.7)
    assert compute_C_V(V) == pytest.approx(2.5 * cosine_bump_mass(0.7) / 2, rel=1e-10)


def test_box_coupling():
    V = PotentialSpec(v0=2.0, kind="box", c=0.3, delta=0.1)
    # cos^2 ramps of width delta contribute delta/2 on each side
    assert compute_C_V(V) == pytest.approx(2.0 * (0.6 + 0.1) ** 2 / 2, rel=1e-9)
    plain = 2.0 * 0.6**2 / 2
    assert abs(compute_C_V(V) - plain) <= 2.0 * (0.8**2 - 0.6**2) / 2


def test_solve_amplitude_calibrates(unit_potential):
    assert compute_C_V(unit_potential) == pytest.approx(1.0, rel=1e-10)
    with pytest.raises(DomainError):
        solve_amplitude(-1.0, PotentialSpec())


def test_potential_support_must_fit(spec3):
    validate_potential(PotentialSpec(v0=1.0, rho=0.8), spec3)
    with pytest.raises(GeometryError):
        validate_potential(PotentialSpec(v0=1.0, rho=1.2), spec3)


def test_potential_validation():
    with pytest.raises(DomainError):
        PotentialSpec(v0=-1.0)
    with pytest.raises(DomainError):
        PotentialSpec(v0=1.0, kind="gauss")


@pytest.mark.parametrize("eps", [0.2, 0.05, 0.01])
def test_scaled_potential_mass_is_eps_independent(star3, unit_potential, eps):
    spec = build_thin_domain(star3, eps)
    r = unit_potential.rho * eps
    val, _ = dblquad(lambda rr, t: rr * float(potential_V_eps([rr, 0.0], spec, unit_potential)),
                     0, 2 * math.pi, 0, r, epsabs=0, epsrel=1e-11)
    assert val * spec.weight == pytest.approx(1.0, rel=1e-8)


# --- measure -------------------------------------------------------------------------


@given(st.floats(0.001, 0.25))
def test_straight_measure_is_exact(eps):
    spec = build_thin_domain(build_star([1.0, 1.0], [0.0, math.pi]), eps)
    assert measure_total(spec) == pytest.approx(2.0, rel=1e-13)


def test_three_star_measure_converges_linearly(star3):
    eps = [0.2, 0.1, 0.05, 0.025]
    err = [abs(measure_total(build_thin_domain(star3, e)) - 3.0) for e in eps]
    assert fit_slope(eps, err, points=4) >= 0.9


def test_gh_error_vanishes_for_constants_on_straight_graph(straight):
    spec = build_thin_domain(straight, 0.1)
    assert gh_measure_error(spec, lambda j, s: np.ones_like(s)) < 1e-13


def test_gh_error_of_constant_equals_measure_defect(spec3):
    err = gh_measure_error(spec3, lambda j, s: np.ones_like(s))
    assert err == pytest.approx(abs(measure_total(spec3) - 3.0), rel=1e-12)
