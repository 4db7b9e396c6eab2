import json
import math
import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from thin2graph import harness
from thin2graph.errors import DomainError, SolverError
from thin2graph.fem2d import assemble
from thin2graph.graph_spectra import secular_eigenvalues
from thin2graph.harness import (
    ConvergenceConfig,
    atomic_write,
    cross_section_averages,
    fit_slope,
    heat_trace_proxy,
    junction_energy,
    junction_mean,
    pullback,
    pushforward,
    pushforward_kinetic,
    recovery_kinetic_target,
    recovery_sequence,
    richardson_extrapolate,
    run_convergence,
    subspace_distance,
    transversal_energy,
    write_report,
)
from thin2graph.mesh2d import triangulate
from thin2graph.star_graph import GraphFunction, l2_inner, sample
from thin2graph.thin_domain import PotentialSpec, build_thin_domain, compute_C_V


@pytest.fixture(scope="module")
def mesh3(spec3):
    return triangulate(spec3, 0.025)


def _arclength(G):
    return sample(G, lambda j, s: s, vertex_value=0.0)


# --- pullback and pushforward ------------------------------------------------------


def test_pullback_of_constant(spec3, mesh3, star3):
    u = pullback(sample(star3, lambda j, s: np.full_like(s, 2.5), vertex_value=2.5), spec3, mesh3)
    assert np.all(u == 2.5)


def test_pullback_of_arclength_on_straight_graph(straight):
    spec = build_thin_domain(straight, 0.1)
    mesh = triangulate(spec, 0.025)
    u = pullback(_arclength(straight), spec, mesh)
    tube = mesh.tags[mesh.triangles].ravel() > 0
    nodes = np.unique(mesh.triangles.ravel()[tube])
    np.testing.assert_allclose(u[nodes], np.abs(mesh.nodes[nodes, 0]), atol=1e-14)


def test_pullback_rejects_jump(spec3, mesh3, star3):
    psi = sample(star3, lambda j, s: np.full_like(s, float(j)), vertex_value=0.0)
    with pytest.raises(DomainError):
        pullback(psi, spec3, mesh3)


def test_pullback_norm_converges(star3):
    psi = sample(star3, lambda j, s: np.cos(math.pi * s), vertex_value=1.0)
    target = float(l2_inner(psi, psi, star3))
    eps, err = (0.2, 0.1, 0.05), []
    for e in eps:
        spec = build_thin_domain(star3, e)
        mesh = triangulate(spec, e / 4)
        u = pullback(psi, spec, mesh)
        err.append(abs(assemble(mesh, spec).M.quad(u) - target))
    assert fit_slope(eps, err) >= 0.9


def test_pushforward_recovers_transversally_constant_fields(spec3, mesh3, star3):
    g = pushforward(pullback(_arclength(star3), spec3, mesh3), spec3, mesh3)
    for j in range(3):
        grid = g.grids[j][1:]
        np.testing.assert_allclose(g.values[j][1:], grid, atol=1e-13)
    assert g.grids[0][0] == 0.0 and g.grids[0][1] == pytest.approx(0.1)


def test_pushforward_of_constant(spec3, mesh3):
    g = pushforward(np.full(mesh3.n_nodes, -1.5), spec3, mesh3)
    assert g.vertex_value == pytest.approx(-1.5, abs=1e-14)
    for v in g.values:
        np.testing.assert_allclose(v, -1.5, atol=1e-14)


def test_pushforward_kinetic_bounded_by_energy(spec3, mesh3, rng):
    # Jensen over each cross-section: the averaged field carries less energy
    K = assemble(mesh3, spec3).K
    for _ in range(5):
        u = rng.standard_normal(mesh3.n_nodes)
        assert pushforward_kinetic(u, mesh3) <= K.quad(u) + 1e-9


def test_cross_section_average_is_exact_for_linear_profiles(spec3, mesh3):
    perp = spec3.graph.directions[1][:, 1]
    u = 3.0 + mesh3.nodes @ perp
    for j, (s, avg) in enumerate(cross_section_averages(u, mesh3)):
        if j == 1:
            np.testing.assert_allclose(avg, 3.0, atol=1e-13)


# --- junction diagnostics --------------------------------------------------------------


def test_junction_mean_of_constant(spec3, mesh3):
    assert junction_mean(np.full(mesh3.n_nodes, 4.0), spec3, mesh3) == pytest.approx(4.0, abs=1e-14)


def test_junction_mean_tends_to_vertex_value(star3):
    psi = sample(star3, lambda j, s: 1.0 + s, vertex_value=1.0)
    eps, gap = (0.2, 0.1, 0.05), []
    for e in eps:
        spec = build_thin_domain(star3, e)
        mesh = triangulate(spec, e / 4)
        gap.append(abs(junction_mean(pullback(psi, spec, mesh), spec, mesh) - 1.0))
    assert fit_slope(eps, gap) == pytest.approx(1.0, abs=0.05)


def test_junction_energy(star3, spec3, mesh3):
    assert junction_energy(np.ones(mesh3.n_nodes), spec3, mesh3) == 0.0
    eps, vals = (0.2, 0.1, 0.05), []
    for e in eps:
        spec = build_thin_domain(star3, e)
        mesh = triangulate(spec, e / 4)
        vals.append(junction_energy(pullback(_arclength(star3), spec, mesh), spec, mesh))
    assert fit_slope(eps, vals) >= 0.8


def test_junction_region_area(spec3, mesh3):
    # the region J^a is the junction plus three stubs of length eps (a - l)
    elems, parts, _ = harness._region_pieces(spec3, mesh3, 2.0)
    expected = spec3.junction_area + 3 * 2 * 0.1 * 0.1 * (2.0 - 1.0)
    assert np.sum(parts) == pytest.approx(expected, rel=1e-12)


def test_junction_parameter_range(spec3, mesh3):
    u = np.ones(mesh3.n_nodes)
    for a in (1.0, 4.0, 5.0):
        with pytest.raises(DomainError):
            junction_mean(u, spec3, mesh3, a)


def test_transversal_energy(spec3, mesh3):
    # tube 1 points at 120 degrees; x . e_perp has unit transversal gradient
    perp = spec3.graph.directions[1][:, 1]
    u = mesh3.nodes @ perp
    L, eps = 1.0, 0.1
    assert transversal_energy(u, spec3, mesh3, 1) == pytest.approx(2 * L * eps**2, rel=1e-10)
    along = mesh3.nodes @ spec3.graph.directions[1][:, 0]
    assert transversal_energy(along, spec3, mesh3, 1) < 1e-20
    with pytest.raises(DomainError):
        transversal_energy(u, spec3, mesh3, 3)


# --- recovery sequence ------------------------------------------------------------------


def test_recovery_of_constant(spec3, mesh3, star3):
    psi = sample(star3, lambda j, s: np.full_like(s, 0.7), vertex_value=0.7)
    np.testing.assert_array_equal(recovery_sequence(psi, spec3, mesh3), 0.7)


def test_recovery_kinetic_on_straight_graph(straight):
    spec = build_thin_domain(straight, 0.1, l=1.0)
    mesh = triangulate(spec, 0.025)
    psi = sample(straight, lambda j, s: 1.0 - s, vertex_value=1.0)
    assert recovery_kinetic_target(psi, spec) == pytest.approx(2 / 0.9, rel=1e-12)
    phiK = assemble(mesh, spec).K.quad(recovery_sequence(psi, spec, mesh))
    assert abs(phiK - 2 / 0.9) <= 10 * mesh.h**2


def test_recovery_potential_is_eps_independent(star3, unit_potential):
    psi = harness.default_recovery_psi(star3)
    for e in (0.2, 0.1, 0.05):
        spec = build_thin_domain(star3, e)
        mesh = triangulate(spec, e / 4)
        P = assemble(mesh, spec, unit_potential).P
        assert P.quad(recovery_sequence(psi, spec, mesh)) == pytest.approx(1.0, abs=1e-6)


def test_recovery_rejects_discontinuous_psi(spec3, mesh3, star3):
    psi = sample(star3, lambda j, s: np.full_like(s, 1.0), vertex_value=0.0)
    with pytest.raises(DomainError):
        recovery_sequence(psi, spec3, mesh3)


# --- rates --------------------------------------------------------------------------------


def test_richardson_geometric_sequence():
    r = richardson_extrapolate([1.2, 1.1, 1.05], [0.4, 0.2, 0.1])
    assert r.limit == pytest.approx(1.0, abs=1e-12)
    assert r.rate == pytest.approx(1.0, abs=1e-10)
    assert r.reliable


def test_richardson_constant_values():
    r = richardson_extrapolate([3.0, 3.0, 3.0], [0.4, 0.2, 0.1])
    assert r.limit == 3.0 and math.isnan(r.rate) and not r.reliable


def test_richardson_non_monotone_is_flagged():
    r = richardson_extrapolate([1.0, 1.2, 1.1], [0.4, 0.2, 0.1])
    assert not r.reliable and math.isfinite(r.limit)


def test_richardson_argument_checks():
    with pytest.raises(DomainError):
        richardson_extrapolate([1, 2], [0.2, 0.1])
    with pytest.raises(DomainError):
        richardson_extrapolate([1, 2, 3], [0.1, 0.2, 0.3])


@given(
    st.floats(-10, 10),
    st.floats(0.1, 10).map(lambda c: c) | st.floats(-10, -0.1),
    st.floats(0.5, 4.0),
)
def test_richardson_recovers_power_law(v0, c, p):
    eps = np.array([0.4, 0.2, 0.1, 0.05])
    r = richardson_extrapolate(v0 + c * eps**p, eps)
    assert abs(r.rate - p) <= 0.05
    assert r.limit == pytest.approx(v0, abs=1e-6 * (1 + abs(c)))


@given(st.floats(-3, 3), st.floats(0.01, 100))
def test_fit_slope_of_power_law(p, c):
    eps = np.array([0.2, 0.1, 0.05, 0.025])
    assert fit_slope(eps, c * eps**p, points=3) == pytest.approx(p, abs=1e-9)


def test_fit_slope_needs_positive_values():
    assert math.isnan(fit_slope([0.2, 0.1, 0.05], [1.0, 0.0, 1.0]))
    assert math.isnan(fit_slope([0.1, 0.05], [1.0, 0.5]))


def test_subspace_distance(star3):
    pairs = secular_eigenvalues(star3, 0.0)
    E = pairs[1].eigenfunctions
    assert len(E) == 2
    c, s = math.cos(0.3), math.sin(0.3)

    def combo(x, y):
        return GraphFunction(E[0].grids, tuple(x * a + y * b for a, b in zip(E[0].values, E[1].values)),
                             x * E[0].vertex_value + y * E[1].vertex_value)

    rotated = [combo(c, s), combo(-s, c)]
    assert subspace_distance(rotated, E, star3) < 1e-10
    other = pairs[2].eigenfunctions[:1]
    assert subspace_distance(other, E[:1], star3) == pytest.approx(1.0, abs=1e-8)
    with pytest.raises(DomainError):
        subspace_distance(E, E[:1], star3)


def test_heat_trace_proxy():
    assert heat_trace_proxy([0, 1, 2], [0, 1, 2], modes=3) == 0.0
    assert heat_trace_proxy([1.0], [0.0], t=1.0, modes=1) == pytest.approx(1 - math.exp(-1))
    with pytest.raises(DomainError):
        heat_trace_proxy([1.0], [1.0], modes=2)


# --- convergence runs -----------------------------------------------------------------


def test_straight_sweep_matches_rectangle_spectrum(straight):
    rep = run_convergence(ConvergenceConfig(straight, eps_list=(0.2, 0.1, 0.05), modes=3))
    for r in rep.rows:
        exact = np.array([0.0, 1.0, 4.0]) * (math.pi / 2) ** 2
        assert np.all(np.abs(np.array(r.eigenvalues) - exact) <= 10 * exact**2 * r.h**2 + 1e-9)


def test_sweep_rows_and_slopes(sweep_reports):
    for rep in sweep_reports.values():
        eps = [r.eps for r in rep.rows]
        assert eps == sorted(eps, reverse=True) and len(set(eps)) == 3
        assert all(r.status == "ok" for r in rep.rows)
        assert all(s["points"] == 3 for s in rep.slopes.values())
        assert "engineering" in rep.metadata["slope_note"]


def test_sweep_liminf_margins_are_nonnegative(sweep_reports):
    for rep in sweep_reports.values():
        for r in rep.rows:
            for name, v in r.diagnostics.items():
                if name.startswith("liminf_margin_"):
                    assert v >= -1e-9


def test_sweep_recovery_and_gh(sweep_reports):
    for cv, rep in sweep_reports.items():
        for r in rep.rows:
            assert r.diagnostics["recovery_phiV_residual"] <= 1e-6
            assert r.diagnostics["recovery_phiK_residual"] <= 10 * r.h**2
        assert rep.slopes["recovery_l2_distance"]["slope"] >= 0.4
        for name in ("const", "linear", "cosine"):
            assert rep.slopes[f"gh_error_{name}"]["slope"] >= 0.9


def test_sweep_heat_trace(sweep_reports):
    for rep in sweep_reports.values():
        eps, h = rep.series("heat_trace")
        assert np.all(np.diff(h) < 0)
        assert richardson_extrapolate(h, eps).limit < 1e-2


def test_sweep_pushforward_converges(sweep_reports):
    for rep in sweep_reports.values():
        for name, s in rep.slopes.items():
            if name.startswith("pushforward_error_") and not s["vanishing"]:
                assert s["slope"] > 0


def test_failed_row_is_kept(monkeypatch, star3):
    real = harness.solve_gevp
    calls = []

    def flaky(A, M, m, **kw):
        # rows run in order on one thread, so the first call belongs to the coarsest eps
        calls.append(A.n)
        if len(calls) == 1:
            raise SolverError("forced failure")
        return real(A, M, m, **kw)

    monkeypatch.setattr(harness, "solve_gevp", flaky)
    rep = run_convergence(ConvergenceConfig(star3, eps_list=(0.25, 0.2, 0.1), modes=2))
    status = [r.status for r in rep.rows]
    assert status[0] == "failed" and status[1:] == ["ok", "ok"]
    assert "forced failure" in rep.rows[0].error
    assert all(math.isnan(e["limit"]) for e in rep.richardson)
    doc = json.loads(rep.to_json())
    assert doc["richardson"][0]["limit"] is None


def test_threads_do_not_change_the_report(star3):
    cfg = dict(eps_list=(0.2, 0.1, 0.05), modes=3)
    a = run_convergence(ConvergenceConfig(star3, threads=1, **cfg))
    b = run_convergence(ConvergenceConfig(star3, threads=3, **cfg))
    assert a.to_json() == b.to_json() and a.to_csv() == b.to_csv()


def test_convergence_config_validation(star3):
    with pytest.raises(DomainError):
        ConvergenceConfig(star3, eps_list=(0.1, 0.2))
    with pytest.raises(DomainError):
        ConvergenceConfig(star3, h_factor=1.5)
    with pytest.raises(DomainError):
        ConvergenceConfig(star3, modes=0)


def test_report_files(tmp_path, sweep_reports):
    rep = sweep_reports[0.0]
    paths = write_report(rep, str(tmp_path), plot_data=True)
    assert os.path.basename(paths[0]) == "report.csv"
    text = open(paths[0]).read()
    assert text.splitlines()[0] == "eps,h,diagnostic,value"
    assert "0.2,0.05,status,ok" in text
    doc = json.loads(open(paths[1]).read())
    assert [r["eps"] for r in doc["rows"]] == [0.2, 0.1, 0.05]
    dat = open(os.path.join(tmp_path, "plot", "lambda_2.dat")).read().splitlines()
    assert dat[0] == "# eps lambda_2" and len(dat) == 4
    assert not [f for f in os.listdir(tmp_path) if f.startswith(".tmp-")]


def test_atomic_write_replaces(tmp_path):
    p = tmp_path / "sub" / "x.txt"
    atomic_write(str(p), "one")
    atomic_write(str(p), "two")
    assert p.read_text() == "two"
    assert os.listdir(p.parent) == ["x.txt"]


def test_potential_sweep_uses_calibrated_coupling(sweep_reports):
    assert sweep_reports[1.0].C_V == pytest.approx(1.0, rel=1e-9)
    assert sweep_reports[0.0].C_V == 0.0
    assert compute_C_V(PotentialSpec()) == 0.0
