"""Numerical surrogates for the thin-domain to star-graph convergence.

Maps between the two sides (pullback ``psi o f_eps``, cross-sectional
pushforward), compactness diagnostics on thin eigenfunctions, the recovery
sequence, rate fitting, and :func:`run_convergence` which sweeps ``eps`` and
collects everything into a :class:`ConvergenceReport`.

All slope thresholds used downstream are engineering choices; the limit
theory only says the diagnostics vanish.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .errors import DomainError, Thin2GraphError
from .fem2d import assemble, eval_phi_eps, solve_gevp
from .graph_spectra import SecularSolveConfig, secular_eigenvalues
from .mesh2d import JUNCTION_TAG, Mesh2D, triangulate
from .star_graph import GraphFunction, MetricStarGraph, l2_inner, phi_kinetic, sample
from .thin_domain import (
    JUNCTION,
    PotentialSpec,
    ThinDomainSpec,
    build_thin_domain,
    compute_C_V,
    gh_measure_error,
    project_points,
    validate_potential,
)

VANISHING = 1e-10  # diagnostics below this at every eps are reported as vanishing


def gh_test_functions(G: MetricStarGraph) -> dict:
    """``1``, ``s`` and ``cos(pi s / l_j)``, all continuous at ``O``."""
    L = np.asarray(G.lengths, dtype=float)
    return {
        "const": lambda j, s: np.ones_like(np.asarray(s, dtype=float)),
        "linear": lambda j, s: np.asarray(s, dtype=float),
        "cosine": lambda j, s: np.cos(math.pi * np.asarray(s, dtype=float) / L[j]),
    }


def _require_continuous(psi: GraphFunction, tol: float):
    if not psi.is_continuous(tol):
        raise DomainError(f"function jumps at O by {psi.junction_gap()!r}; not in H1 of the graph")


# ---------------------------------------------------------------------------
# maps between domain and graph
# ---------------------------------------------------------------------------


def pullback(psi: GraphFunction, spec: ThinDomainSpec, mesh: Mesh2D, tol_cont: float = 1e-10) -> np.ndarray:
    """Nodal values of ``psi o f_eps``."""
    _require_continuous(psi, tol_cont)
    edge, s = project_points(mesh.nodes, spec, tol=1e-9)
    u = np.empty(mesh.n_nodes, dtype=np.result_type(*psi.values, float))
    at_o = edge == JUNCTION
    u[at_o] = psi.vertex_value
    for j in range(spec.graph.N):
        sel = edge == j
        if np.any(sel):
            u[sel] = psi.evaluate(j, s[sel])
    return u


def _cross_weights(t: np.ndarray) -> np.ndarray:
    """Trapezoid weights over the tube cross-section, normalised to sum 1."""
    w = np.zeros(len(t))
    d = np.diff(t)
    w[:-1] += 0.5 * d
    w[1:] += 0.5 * d
    return w / (t[-1] - t[0])


def cross_section_averages(u, mesh: Mesh2D) -> list:
    """Per tube, the pair ``(s, (P_eps u)(s))`` on the mesh columns."""
    u = np.asarray(u)
    out = []
    for tg in mesh.tubes:
        w = _cross_weights(tg.t)
        out.append((tg.s, u[tg.ids] @ w))
    return out


def pushforward(u, spec: ThinDomainSpec, mesh: Mesh2D, a: float | None = None) -> GraphFunction:
    """Cross-sectional averages on the tubes, ``xi_eps`` at ``O``.

    The grid of edge ``j`` is ``0`` followed by the mesh columns
    ``eps l = s_0 < ... < l_j``; between ``0`` and ``eps l`` the function
    interpolates linearly from ``xi_eps`` to the first column average.
    """
    xi = junction_mean(u, spec, mesh, a)
    grids, values = [], []
    for s, avg in cross_section_averages(u, mesh):
        grids.append(np.concatenate([[0.0], s]))
        values.append(np.concatenate([[xi], avg]))
    return GraphFunction(tuple(grids), tuple(values), xi)


def pushforward_kinetic(u, mesh: Mesh2D) -> float:
    """``sum_j int_{eps l}^{l_j} |(P_eps u)'|^2 ds`` on the tube part.

    For P1 fields on the structured tube grid this is bounded by the tube
    share of ``phi_eps^K(u)`` (Jensen over the cross-section), so the
    difference is a discrete lower-semicontinuity check.
    """
    total = 0.0
    for s, avg in cross_section_averages(u, mesh):
        total += float(np.sum(np.abs(np.diff(avg)) ** 2 / np.diff(s)))
    return total


# ---------------------------------------------------------------------------
# junction region J_eps^a and element-wise integrals
# ---------------------------------------------------------------------------


def _clip_triangle(P, lam, keep):
    """Clip a triangle to ``keep >= 0`` (values at the vertices).

    Returns sub-triangles as (points, barycentric coordinates of the parent).
    """
    poly, bary = [], []
    for a in range(3):
        b = (a + 1) % 3
        ka, kb = keep[a], keep[b]
        if ka >= 0:
            poly.append(P[a])
            bary.append(lam[a])
        if (ka >= 0) != (kb >= 0):
            t = ka / (ka - kb)
            poly.append(P[a] + t * (P[b] - P[a]))
            bary.append(lam[a] + t * (lam[b] - lam[a]))
    pieces = []
    for i in range(1, len(poly) - 1):
        pieces.append((np.array([poly[0], poly[i], poly[i + 1]]), np.array([bary[0], bary[i], bary[i + 1]])))
    return pieces


def _region_pieces(spec: ThinDomainSpec, mesh: Mesh2D, a: float):
    """Element pieces covering ``J_eps^a``: ``(element, area, bary centroid)``.

    Junction elements enter whole; tube elements are clipped at ``s = eps a``.
    """
    cut = spec.eps * a
    areas = mesh.areas()
    elems, parts, cents = [], [], []
    junction = np.nonzero(mesh.tags == JUNCTION_TAG)[0]
    elems.extend(junction.tolist())
    parts.extend(areas[junction].tolist())
    cents.extend([np.full(3, 1.0 / 3.0)] * len(junction))
    eye = np.eye(3)
    for j in range(spec.graph.N):
        e_j = spec.graph.unit_vector(j)
        idx = np.nonzero(mesh.tags == j + 1)[0]
        P = mesh.nodes[mesh.triangles[idx]]
        s = P @ e_j
        for e, Pe, se in zip(idx, P, s):
            if se.min() >= cut:
                continue
            if se.max() <= cut:
                elems.append(int(e))
                parts.append(float(areas[e]))
                cents.append(np.full(3, 1.0 / 3.0))
                continue
            for Q, lam in _clip_triangle(Pe, eye, cut - se):
                e1, e2 = Q[1] - Q[0], Q[2] - Q[0]
                ar = 0.5 * abs(e1[0] * e2[1] - e1[1] * e2[0])
                if ar > 0:
                    elems.append(int(e))
                    parts.append(ar)
                    cents.append(lam.mean(axis=0))
    return np.array(elems, dtype=np.int64), np.array(parts), np.array(cents)


def _check_a(spec: ThinDomainSpec, a):
    a = spec.a if a is None else float(a)
    hi = float(np.min(spec.graph.lengths)) / spec.eps0
    if not (spec.l < a < hi):
        raise DomainError(f"a={a} must lie in (l, min l_j / eps0) = ({spec.l}, {hi})")
    return a


def element_gradients(u, mesh: Mesh2D) -> np.ndarray:
    """Constant P1 gradient on every triangle, shape ``(n_tri, 2)``."""
    u = np.asarray(u)
    P = mesh.nodes[mesh.triangles]
    U = u[mesh.triangles]
    e1, e2 = P[:, 1] - P[:, 0], P[:, 2] - P[:, 0]
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    d1, d2 = U[:, 1] - U[:, 0], U[:, 2] - U[:, 0]
    gx = (d1 * e2[:, 1] - d2 * e1[:, 1]) / det
    gy = (e1[:, 0] * d2 - e2[:, 0] * d1) / det
    return np.stack([gx, gy], axis=1)


def junction_mean(u, spec: ThinDomainSpec, mesh: Mesh2D, a: float | None = None) -> float:
    """Mean of ``u`` over ``J_eps^a`` (junction plus tube stubs up to ``s = eps a``)."""
    a = _check_a(spec, a)
    elems, parts, cents = _region_pieces(spec, mesh, a)
    total = float(np.sum(parts))
    if not total > 0:
        raise DomainError("junction region is empty")
    u = np.asarray(u)
    vals = np.einsum("ij,ij->i", cents, u[mesh.triangles[elems]])
    return float(np.dot(parts, vals) / total)


def junction_energy(u, spec: ThinDomainSpec, mesh: Mesh2D, a: float | None = None) -> float:
    """``int_{J_eps^a} |grad u|^2 dx`` (the rescaling factor is 1 in the plane)."""
    a = _check_a(spec, a)
    elems, parts, _ = _region_pieces(spec, mesh, a)
    g = element_gradients(u, mesh)[elems]
    return float(np.dot(parts, np.sum(np.abs(g) ** 2, axis=1)))


def transversal_energy(u, spec: ThinDomainSpec, mesh: Mesh2D, j: int) -> float:
    """Transversal gradient energy of tube ``j`` mapped to the fixed tube.

    ``(l_j eps / (l_j - eps l)) * int_{D_j} |grad u . e_perp|^2 dx``.
    """
    if not 0 <= j < spec.graph.N:
        raise DomainError(f"no edge {j}")
    sel = mesh.tags == j + 1
    perp = spec.graph.directions[j][:, 1]
    g = element_gradients(u, mesh)[sel] @ perp
    raw = float(np.dot(mesh.areas()[sel], np.abs(g) ** 2))
    L = float(spec.graph.lengths[j])
    return L * spec.eps / (L - spec.eps * spec.l) * raw


# ---------------------------------------------------------------------------
# recovery sequence
# ---------------------------------------------------------------------------


def recovery_sequence(psi: GraphFunction, spec: ThinDomainSpec, mesh: Mesh2D,
                      tol_cont: float = 1e-10) -> np.ndarray:
    """``psi_j(gamma_eps(s))`` on tube ``j``, ``psi(O)`` on the junction.

    ``gamma_eps(s) = l_j (s - eps l) / (l_j - eps l)`` stretches the tube
    onto the whole edge, so the field is continuous across the mouths.
    """
    _require_continuous(psi, tol_cont)
    u = np.full(mesh.n_nodes, psi.vertex_value, dtype=np.result_type(*psi.values, float))
    mouth = spec.eps * spec.l
    for tg in mesh.tubes:
        L = float(spec.graph.lengths[tg.edge])
        gam = L * (tg.s - mouth) / (L - mouth)
        col = psi.evaluate(tg.edge, gam)
        col[0] = psi.vertex_value
        u[tg.ids] = col[:, None]
    return u


def recovery_kinetic_target(psi: GraphFunction, spec: ThinDomainSpec) -> float:
    """``sum_j l_j / (l_j - eps l) * int |psi_j'|^2``."""
    total = 0.0
    for j, L in enumerate(spec.graph.lengths):
        one = GraphFunction((psi.grids[j],), (psi.values[j],), psi.values[j][0])
        total += L / (L - spec.eps * spec.l) * phi_kinetic(one)
    return total


def default_recovery_psi(G: MetricStarGraph, n: int = 1025) -> GraphFunction:
    """``psi_j(s) = 1 - s / l_j``."""
    return sample(G, lambda j, s: 1.0 - s / G.lengths[j], vertex_value=1.0, n=n)


# ---------------------------------------------------------------------------
# rates
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RichardsonResult:
    limit: float
    rate: float
    reliable: bool


def _check_sweep(values, eps):
    v = np.asarray(values, dtype=float)
    e = np.asarray(eps, dtype=float)
    if v.shape != e.shape or v.ndim != 1 or len(v) < 3:
        raise DomainError("need at least three (eps, value) pairs")
    if np.any(e <= 0) or np.any(np.diff(e) >= 0):
        raise DomainError("eps must be positive and strictly decreasing")
    return v[-3:], e[-3:]


def richardson_extrapolate(values, eps) -> RichardsonResult:
    """Fit ``v(eps) = v0 + c eps^p`` through the last three points.

    Three points fix the three parameters. Constant data return the value
    with the rate flagged; non-monotone data fall back to ``p = 1`` (linear
    least squares) and are flagged as well.
    """
    v, e = _check_sweep(values, eps)
    d1, d2 = v[0] - v[1], v[1] - v[2]
    scale = max(float(np.max(np.abs(v))), 1e-300)
    if abs(d1) <= 1e-15 * scale and abs(d2) <= 1e-15 * scale:
        return RichardsonResult(float(v[-1]), math.nan, False)
    if d1 * d2 <= 0:
        c, v0 = np.polyfit(e, v, 1)
        return RichardsonResult(float(v0), 1.0, False)
    target = math.log(d1 / d2)

    def g(p):
        return math.log((e[0] ** p - e[1] ** p) / (e[1] ** p - e[2] ** p)) - target

    lo, hi = 1e-3, 20.0
    if g(lo) * g(hi) > 0:
        c, v0 = np.polyfit(e, v, 1)
        return RichardsonResult(float(v0), 1.0, False)
    p = brentq(g, lo, hi, xtol=1e-14, rtol=1e-14)
    c = d2 / (e[1] ** p - e[2] ** p)
    return RichardsonResult(float(v[2] - c * e[2] ** p), float(p), True)


def fit_slope(eps, values, points: int = 3) -> float:
    """Least-squares slope of ``log|value|`` against ``log eps`` on the last points."""
    e = np.asarray(eps, dtype=float)[-points:]
    v = np.abs(np.asarray(values, dtype=float))[-points:]
    if len(e) < points or np.any(v <= 0) or not np.all(np.isfinite(v)):
        return math.nan
    return float(np.polyfit(np.log(e), np.log(v), 1)[0])


def subspace_distance(F: list, E: list, G: MetricStarGraph) -> float:
    """Sine of the largest principal angle between ``span F`` and ``span E``.

    ``E`` must be L2(G)-orthonormal; ``F`` is orthonormalised here after
    resampling onto the grids of ``E``.
    """
    if len(F) != len(E) or not F:
        raise DomainError("subspaces must have the same positive dimension")
    ref = E[0]
    Fr = [GraphFunction(ref.grids, tuple(f.evaluate(j, g) for j, g in enumerate(ref.grids)), f.vertex_value)
          for f in F]
    k = len(F)
    Gff = np.array([[float(np.real(l2_inner(Fr[a], Fr[b], G))) for b in range(k)] for a in range(k)])
    C = np.array([[float(np.real(l2_inner(Fr[a], E[b], G))) for b in range(k)] for a in range(k)])
    L = np.linalg.cholesky(Gff)
    sv = np.linalg.svd(np.linalg.solve(L, C), compute_uv=False)
    return math.sqrt(max(0.0, 1.0 - min(1.0, float(sv.min())) ** 2))


def heat_trace_proxy(lam_eps, lam_graph, t: float = 0.5, modes: int = 5) -> float:
    """``sum_{m <= modes} |exp(-t lam_m(eps)) - exp(-t lam_m)|``."""
    a = np.asarray(lam_eps, dtype=float)[:modes]
    b = np.asarray(lam_graph, dtype=float)[:modes]
    if len(a) < modes or len(b) < modes:
        raise DomainError(f"need {modes} eigenvalues on both sides")
    return float(np.sum(np.abs(np.exp(-t * a) - np.exp(-t * b))))


# ---------------------------------------------------------------------------
# convergence sweep
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConvergenceConfig:
    graph: MetricStarGraph
    eps_list: tuple = (0.2, 0.1, 0.05)
    eps0: float = 0.25
    l: float = 1.0
    a: float | None = None
    junction: object = "AUTO"
    potential: PotentialSpec = field(default_factory=PotentialSpec)
    h_factor: float = 0.25  # h = h_factor * eps
    layers: int | None = None
    modes: int = 6
    tol: float = 1e-8
    sigma: float = -1.0
    heat_t: float = 0.5
    heat_modes: int = 5
    threads: int = 1

    def __post_init__(self):
        e = np.asarray(self.eps_list, dtype=float)
        if e.ndim != 1 or len(e) < 1 or np.any(e <= 0) or np.any(np.diff(e) >= 0):
            raise DomainError("eps list must be positive and strictly decreasing")
        if not 0 < self.h_factor <= 1:
            raise DomainError("h_factor must lie in (0, 1] so that h <= eps")
        if self.modes < 1 or self.heat_modes < 1 or self.threads < 1:
            raise DomainError("modes, heat_modes and threads must be >= 1")


@dataclass
class ConvergenceRow:
    eps: float
    h: float
    status: str = "ok"
    error: str = ""
    n_nodes: int = 0
    eigenvalues: list = field(default_factory=list)
    residuals: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)


@dataclass
class ConvergenceReport:
    config: dict
    graph_eigenvalues: list
    clusters: list  # (first mode, multiplicity) per graph eigenvalue
    C_V: float
    rows: list
    slopes: dict
    richardson: list
    metadata: dict

    def ok_rows(self):
        return [r for r in self.rows if r.status == "ok"]

    def series(self, name: str):
        rows = self.ok_rows()
        return np.array([r.eps for r in rows]), np.array([r.diagnostics[name] for r in rows])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["eps", "h", "diagnostic", "value"])
        for r in self.rows:
            w.writerow([repr(r.eps), repr(r.h), "status", r.status])
            for name in sorted(r.diagnostics):
                w.writerow([repr(r.eps), repr(r.h), name, _fmt(r.diagnostics[name])])
        return buf.getvalue()

    def to_json(self) -> str:
        doc = {
            "metadata": self.metadata,
            "config": self.config,
            "graph": {"C_V": self.C_V, "eigenvalues": self.graph_eigenvalues,
                      "clusters": [list(c) for c in self.clusters]},
            "rows": [
                {"eps": r.eps, "h": r.h, "status": r.status, "error": r.error, "n_nodes": r.n_nodes,
                 "eigenvalues": r.eigenvalues, "residuals": r.residuals, "diagnostics": r.diagnostics}
                for r in self.rows
            ],
            "slopes": self.slopes,
            "richardson": self.richardson,
        }
        return json.dumps(_jsonable(doc), sort_keys=True, indent=2) + "\n"

    def plot_data(self) -> dict:
        """``{name: text}`` with ``eps value`` lines per diagnostic."""
        names = sorted({n for r in self.ok_rows() for n in r.diagnostics})
        out = {}
        for name in names:
            lines = [f"# eps {name}"]
            for r in self.ok_rows():
                if name in r.diagnostics:
                    lines.append(f"{r.eps!r} {_fmt(r.diagnostics[name])}")
            out[name] = "\n".join(lines) + "\n"
        return out


def _fmt(x):
    return repr(float(x)) if isinstance(x, (float, np.floating, int, np.integer)) else str(x)


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple, np.ndarray)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else None
    return x


def _complete_clusters(pairs, m):
    """Graph eigenvalues covering the first ``m`` modes, never splitting a multiple one."""
    lams, clusters, count = [], [], 0
    for p in pairs:
        if count >= m:
            break
        clusters.append((count, p.multiplicity))
        lams += [p.lam] * p.multiplicity
        count += p.multiplicity
    return lams, clusters


def _row(cfg: ConvergenceConfig, eps: float, pairs, clusters, C_V: float) -> ConvergenceRow:
    h = cfg.h_factor * eps
    row = ConvergenceRow(eps=float(eps), h=float(h))
    try:
        spec = build_thin_domain(cfg.graph, eps, cfg.eps0, cfg.l, cfg.junction, a=cfg.a)
        if not cfg.potential.is_zero:
            validate_potential(cfg.potential, spec)
        mesh = triangulate(spec, h, cfg.layers)
        asm = assemble(mesh, spec, cfg.potential)
        A = asm.A
        m_eff = sum(mult for _, mult in clusters)
        res = solve_gevp(A, asm.M, m_eff, tol=cfg.tol, sigma=cfg.sigma)
        row.n_nodes = mesh.n_nodes
        row.eigenvalues = [float(x) for x in res.eigenvalues]
        row.residuals = [float(x) for x in res.residuals]
        d = row.diagnostics
        G = cfg.graph
        lam_graph = [p.lam for p in pairs for _ in range(p.multiplicity)]
        for i, lam in enumerate(row.eigenvalues):
            d[f"lambda_{i + 1}"] = lam
            d[f"lambda_error_{i + 1}"] = abs(lam - lam_graph[i])
        U = res.eigenvectors
        for c, ((first, mult), pair) in enumerate(zip(clusters, pairs)):
            cols = range(first, first + mult)
            trans = junc = margin = 0.0
            gap2 = np.zeros(G.N)
            xi2 = 0.0
            pushed = []
            for i in cols:
                u = U[:, i]
                trans += sum(transversal_energy(u, spec, mesh, j) for j in range(G.N))
                junc += junction_energy(u, spec, mesh, cfg.a)
                g = pushforward(u, spec, mesh, cfg.a)
                pushed.append(g)
                xi = g.vertex_value
                xi2 += xi * xi
                for j in range(G.N):
                    gap2[j] += (xi - float(g.evaluate(j, 2 * eps * cfg.l))) ** 2
                margin += asm.K.quad(u) - pushforward_kinetic(u, mesh)
            tag = f"c{c + 1}"
            d[f"transversal_energy_{tag}"] = trans
            d[f"junction_energy_{tag}"] = junc
            d[f"junction_mean_rms_{tag}"] = math.sqrt(xi2 / mult)
            d[f"liminf_margin_{tag}"] = margin
            for j in range(G.N):
                d[f"continuity_gap_{tag}_e{j + 1}"] = math.sqrt(gap2[j])
            d[f"pushforward_error_{tag}"] = subspace_distance(pushed, pair.eigenfunctions, G)
        d["heat_trace"] = heat_trace_proxy(row.eigenvalues, lam_graph, cfg.heat_t,
                                           min(cfg.heat_modes, len(lam_graph)))
        for name, fn in gh_test_functions(G).items():
            d[f"gh_error_{name}"] = gh_measure_error(spec, fn)
        psi = default_recovery_psi(G)
        ur = recovery_sequence(psi, spec, mesh)
        e = eval_phi_eps(ur, asm.K, asm.P, asm.M)
        d["recovery_phiK_residual"] = abs(e["phiK"] - recovery_kinetic_target(psi, spec))
        d["recovery_phiV_residual"] = abs(e["phiV"] - C_V * abs(psi.vertex_value) ** 2)
        diff = ur - pullback(psi, spec, mesh)
        d["recovery_l2_distance"] = math.sqrt(max(asm.M.quad(diff), 0.0))
    except Thin2GraphError as exc:
        row.status = "failed"
        row.error = f"{type(exc).__name__}: {exc}"
        row.diagnostics = {}
    return row


SLOPE_PREFIXES = ("lambda_error_", "transversal_energy_", "junction_energy_", "continuity_gap_",
                  "pushforward_error_", "gh_error_", "recovery_l2_distance", "heat_trace")


def run_convergence(cfg: ConvergenceConfig) -> ConvergenceReport:
    """Sweep ``cfg.eps_list``; rows run concurrently on ``cfg.threads`` threads.

    A failing row is marked and kept; slopes and extrapolations use the
    successful rows only (the last three of them).
    """
    G = cfg.graph
    C_V = compute_C_V(cfg.potential)
    pairs_all = secular_eigenvalues(G, C_V, SecularSolveConfig(max_eigenvalues=cfg.modes + G.N + 1))
    lam_graph, clusters = _complete_clusters(pairs_all, cfg.modes)
    pairs = pairs_all[:len(clusters)]
    args = [float(e) for e in cfg.eps_list]
    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as ex:
            rows = list(ex.map(lambda e: _row(cfg, e, pairs, clusters, C_V), args))
    else:
        rows = [_row(cfg, e, pairs, clusters, C_V) for e in args]
    rows.sort(key=lambda r: -r.eps)
    ok = [r for r in rows if r.status == "ok"]
    slopes = {}
    names = sorted({n for r in ok for n in r.diagnostics if n.startswith(SLOPE_PREFIXES)})
    for name in names:
        e = np.array([r.eps for r in ok])
        v = np.array([r.diagnostics[name] for r in ok])
        vanishing = bool(np.all(np.abs(v) <= VANISHING))
        slope = math.nan if vanishing or len(ok) < 3 else fit_slope(e, v)
        slopes[name] = {"slope": slope, "points": min(3, len(ok)), "vanishing": vanishing}
    richardson = []
    for i in range(len(lam_graph)):
        entry = {"mode": i + 1, "graph": lam_graph[i]}
        if len(ok) >= 3:
            rr = richardson_extrapolate([r.eigenvalues[i] for r in ok], [r.eps for r in ok])
            entry.update(limit=rr.limit, rate=rr.rate, reliable=rr.reliable)
        else:
            entry.update(limit=math.nan, rate=math.nan, reliable=False)
        richardson.append(entry)
    metadata = {
        "generator": "thin2graph",
        "slope_note": "slope thresholds are engineering choices; the limit theory gives no rates",
        "slope_points": 3,
        "vanishing_floor": VANISHING,
    }
    return ConvergenceReport(_config_dict(cfg, C_V), lam_graph, clusters, C_V, rows, slopes, richardson, metadata)


def _config_dict(cfg: ConvergenceConfig, C_V: float) -> dict:
    V = cfg.potential
    return {
        "lengths": [float(x) for x in cfg.graph.lengths],
        "angles": [float(x) for x in cfg.graph.angles],
        "eps_list": [float(x) for x in cfg.eps_list],
        "eps0": cfg.eps0, "l": cfg.l, "a": cfg.a if cfg.a is not None else 2.0 * cfg.l,
        "junction": cfg.junction if isinstance(cfg.junction, str) else np.asarray(cfg.junction).tolist(),
        "potential": {"kind": V.kind, "v0": V.v0, "rho": V.rho, "c": V.c, "delta": V.delta, "C_V": C_V},
        "h_factor": cfg.h_factor, "layers": cfg.layers, "modes": cfg.modes, "tol": cfg.tol,
        "sigma": cfg.sigma, "heat_t": cfg.heat_t, "heat_modes": cfg.heat_modes,
    }


def atomic_write(path: str, text: str) -> None:
    """Write via a temporary file in the same directory, then rename."""
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=d)
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_report(report: ConvergenceReport, out_dir: str, plot_data: bool = False) -> list:
    """``report.csv``, ``report.json`` and optionally ``plot/<diagnostic>.dat``."""
    paths = [os.path.join(out_dir, "report.csv"), os.path.join(out_dir, "report.json")]
    atomic_write(paths[0], report.to_csv())
    atomic_write(paths[1], report.to_json())
    if plot_data:
        for name, text in report.plot_data().items():
            p = os.path.join(out_dir, "plot", f"{name}.dat")
            atomic_write(p, text)
            paths.append(p)
    return paths
