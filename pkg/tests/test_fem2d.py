import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.sparse.linalg import spsolve

from thin2graph.errors import DomainError, SolverError
from thin2graph.fem2d import LDLFactor, SparseSymMatrix, assemble, eval_phi_eps, solve_gevp
from thin2graph.harness import pullback
from thin2graph.mesh2d import Mesh2D, triangulate
from thin2graph.star_graph import build_star, sample
from thin2graph.thin_domain import build_thin_domain, measure_total


@pytest.fixture(scope="module")
def rect():
    # the straight 2-edge domain is exactly the Neumann rectangle (-1, 1) x (-eps, eps)
    spec = build_thin_domain(build_star([1, 1], [0, math.pi]), 0.1)
    return spec, triangulate(spec, 0.025)


@pytest.fixture(scope="module")
def asm3(spec3, unit_potential):
    mesh = triangulate(spec3, 0.025)
    return mesh, assemble(mesh, spec3, unit_potential)


def test_constant_field(asm3, spec3):
    mesh, a = asm3
    e = eval_phi_eps(np.full(mesh.n_nodes, 2.0), a.K, a.P, a.M)
    assert abs(e["phiK"]) < 1e-10
    assert e["norm2"] == pytest.approx(4 * measure_total(spec3), abs=1e-10)
    assert e["phiV"] == pytest.approx(4 * 1.0, abs=1e-6)


def test_zero_field(asm3):
    mesh, a = asm3
    assert eval_phi_eps(np.zeros(mesh.n_nodes), a.K, a.P, a.M) == {"phiK": 0.0, "phiV": 0.0, "norm2": 0.0}


def test_wrong_field_length(asm3):
    _, a = asm3
    with pytest.raises(DomainError):
        eval_phi_eps(np.zeros(3), a.K, a.P, a.M)


def test_linear_field_on_tube_only_mesh(spec3):
    mesh = triangulate(spec3, 0.05)
    keep = mesh.tags == 1
    tube = Mesh2D(mesh.nodes, mesh.triangles[keep], mesh.tags[keep])
    a = assemble(tube, spec3)
    u = mesh.nodes[:, 0].copy()
    assert a.K.quad(u) == pytest.approx(spec3.tube_area(0) * spec3.weight, rel=1e-12)


def test_zero_potential_gives_zero_matrix(rect):
    spec, mesh = rect
    assert assemble(mesh, spec).P.data.size == 0


def test_pullback_of_arclength_energy(straight, star3):
    # on the straight domain s o f_eps = |x_1| everywhere, so the energy is exactly 2
    for G, total in ((straight, 2.0), (star3, 3.0)):
        psi = sample(G, lambda j, s: s, vertex_value=0.0)
        err = []
        for eps in (0.2, 0.1, 0.05):
            spec = build_thin_domain(G, eps)
            mesh = triangulate(spec, eps / 4)
            err.append(abs(assemble(mesh, spec).K.quad(pullback(psi, spec, mesh)) - total))
        if G is straight:
            assert max(err) < 1e-12
        else:
            assert np.all(np.diff(err) < 0) and err[-1] < 0.05


def test_rectangle_spectrum(rect):
    spec, mesh = rect
    a = assemble(mesh, spec)
    res = solve_gevp(a.A, a.M, 4)
    exact = np.array([0.0, 1.0, 4.0, 9.0]) * (math.pi / 2) ** 2
    err = np.abs(res.eigenvalues - exact)
    # P1 error grows like lambda^2 h^2, so the 10 h^2 budget covers the first two nonzero modes
    assert np.all(err[:3] <= 10 * mesh.h**2)
    assert err[3] <= 10 * exact[3] ** 2 * mesh.h**2 / exact[2]
    # the ground state is constant
    v = res.eigenvectors[:, 0]
    assert np.ptp(v) < 1e-8 * np.max(np.abs(v))


def test_eigenvectors_are_mass_orthonormal(asm3):
    _, a = asm3
    res = solve_gevp(a.A, a.M, 6)
    Y = res.eigenvectors
    G = Y.T @ (a.M.to_scipy() @ Y)
    np.testing.assert_allclose(G, np.eye(6), atol=1e-8)
    assert np.all(res.residuals <= 1e-8)
    assert np.all(np.diff(res.eigenvalues) >= -1e-12)


def test_galerkin_monotonicity(spec3):
    # h and h/2 give nested meshes here: layers and columns both double
    lam = []
    for h in (0.05, 0.025):
        mesh = triangulate(spec3, h)
        a = assemble(mesh, spec3)
        lam.append(solve_gevp(a.A, a.M, 5).eigenvalues)
    assert np.all(lam[1] <= lam[0] + 1e-8)


@pytest.mark.parametrize("c", [3.7, 1e-3])
def test_measure_weight_scaling_invariance(spec3, unit_potential, c):
    mesh = triangulate(spec3, 0.05)
    base = assemble(mesh, spec3, unit_potential)
    scaled = assemble(mesh, spec3, unit_potential, weight=c * spec3.weight)
    l0 = solve_gevp(base.A, base.M, 5, tol=1e-9).eigenvalues
    l1 = solve_gevp(scaled.A, scaled.M, 5, tol=1e-9 * c).eigenvalues
    np.testing.assert_allclose(l1, l0, rtol=1e-12, atol=1e-12)


def test_min_max_bound(asm3, rng):
    _, a = asm3
    lam1 = solve_gevp(a.A, a.M, 1).eigenvalues[0]
    A, M = a.A.to_scipy(), a.M.to_scipy()
    X = rng.standard_normal((a.M.n, 50))
    rq = np.einsum("ij,ij->j", X, A @ X) / np.einsum("ij,ij->j", X, M @ X)
    assert np.all(rq >= lam1 - 1e-10)


def test_ldl_matches_scipy(asm3, rng):
    _, a = asm3
    S = a.A + a.M
    F = LDLFactor(S)
    B = rng.standard_normal((S.n, 3))
    ref = np.column_stack([spsolve(S.to_scipy().tocsc(), B[:, k]) for k in range(3)])
    np.testing.assert_allclose(F.solve(B), ref, rtol=1e-9, atol=1e-12)
    np.testing.assert_allclose(F.solve(B[:, 0]), ref[:, 0], rtol=1e-9, atol=1e-12)


def test_ldl_breakdown_raises():
    S = SparseSymMatrix.from_scipy(sp.csr_matrix(np.array([[1.0, 2.0], [2.0, 1.0]])))
    with pytest.raises(SolverError):
        LDLFactor(S)


def test_solver_non_convergence_raises(asm3):
    _, a = asm3
    with pytest.raises(SolverError):
        solve_gevp(a.A, a.M, 6, tol=1e-30, max_basis=12)


def test_solver_argument_errors(asm3):
    _, a = asm3
    with pytest.raises(DomainError):
        solve_gevp(a.A, a.M, 0)
    with pytest.raises(DomainError):
        solve_gevp(a.A, a.M, 2, sigma=0.5)


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 30), st.integers(0, 2**32 - 1))
def test_sparse_storage_round_trip(n, seed):
    r = np.random.default_rng(seed)
    D = sp.random(n, n, density=0.3, random_state=r)
    S = (D + D.T).toarray()
    M = SparseSymMatrix.from_scipy(S)
    np.testing.assert_array_equal(M.to_scipy().toarray(), S)
    x = r.standard_normal(n)
    np.testing.assert_allclose(M.matvec(x), S @ x, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(M.diagonal(), np.diag(S))


@settings(max_examples=20, deadline=None)
@given(st.integers(3, 25), st.integers(0, 2**32 - 1))
def test_small_dense_gevp_matches_numpy(n, seed):
    r = np.random.default_rng(seed)
    B = r.standard_normal((n, n))
    A = B @ B.T
    C = r.standard_normal((n, n))
    M = C @ C.T + n * np.eye(n)
    m = min(3, n)
    res = solve_gevp(SparseSymMatrix.from_scipy(A), SparseSymMatrix.from_scipy(M), m, tol=1e-8)
    L = np.linalg.cholesky(M)
    Li = np.linalg.inv(L)
    ref = np.linalg.eigvalsh(Li @ A @ Li.T)[:m]
    np.testing.assert_allclose(res.eigenvalues, ref, rtol=1e-9, atol=1e-9)
