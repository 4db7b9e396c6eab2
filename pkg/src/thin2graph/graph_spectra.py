"""Spectrum of the Kirchhoff-delta Laplacian on a star graph.

The operator is ``-psi''`` on each edge, Neumann at the outer vertices, and at
``O`` continuity plus ``sum_j psi_j'(0+) = C_V psi(O)`` (derivatives taken into
the edges). This is the natural boundary condition of the limit energy.

With ``psi_j(s) = A_j cos(k (l_j - s))`` the Neumann condition at ``l_j`` holds
automatically and the eigenvalues ``lambda = k^2`` come in two families:

* junction value nonzero: roots of ``F(k) = sum_j k tan(k l_j) - C_V``;
* junction value zero: ``cos(k l_j) = 0`` on a set ``S`` of at least two
  edges at once, with multiplicity ``|S| - 1``.

``F`` is strictly increasing between consecutive poles, so every pole interval
holds exactly one root, found by bisection.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.linalg import null_space
from scipy.sparse.linalg import eigsh

from . import kernels
from .errors import DomainError, SolverError
from .star_graph import DEFAULT_SAMPLES, GraphFunction, MetricStarGraph


@dataclass(frozen=True)
class SecularSolveConfig:
    max_eigenvalues: int = 10
    k_max: float | None = None  # None: grow the search window until enough roots are found
    bracket_tol: float = 1e-12
    pole_guard: float = 1e-9
    samples: int = DEFAULT_SAMPLES

    def __post_init__(self):
        if self.max_eigenvalues < 1:
            raise DomainError("max_eigenvalues must be >= 1")
        if self.k_max is not None and not self.k_max > 0:
            raise DomainError("k_max must be positive")
        if not (self.bracket_tol > 0 and self.pole_guard > 0):
            raise DomainError("tolerances must be positive")


@dataclass(frozen=True)
class GraphEigenpair:
    lam: float
    k: float
    multiplicity: int
    branch: str  # "A" (psi(O) != 0), "B" (psi(O) == 0) or "0" (constant)
    eigenfunctions: list = field(default_factory=list, repr=False)


def _check_cv(C_V):
    if not (C_V >= 0 and math.isfinite(C_V)):
        raise DomainError(f"C_V must be finite and >= 0, got {C_V}")


def _poles(lengths, k_max, guard):
    """Sorted distinct tan poles below k_max with the set of edges hitting each."""
    raw = []
    for j, l in enumerate(lengths):
        m = 0
        while True:
            p = (m + 0.5) * math.pi / l
            if p > k_max:
                break
            raw.append((p, j))
            m += 1
    raw.sort()
    groups: list[tuple[float, list[int]]] = []
    for p, j in raw:
        if groups and p - groups[-1][0] <= guard * max(1.0, p):
            groups[-1][1].append(j)
        else:
            groups.append((p, [j]))
    return groups


def _roots_up_to(G: MetricStarGraph, C_V: float, k_max: float, cfg: SecularSolveConfig):
    lengths = np.ascontiguousarray(G.lengths, dtype=float)
    groups = _poles(lengths, k_max, cfg.pole_guard)
    found = []  # (k, multiplicity, branch)
    if C_V == 0:
        found.append((0.0, 1, "0"))
    edges = [0.0] + [g[0] for g in groups] + [k_max]
    for a, b in zip(edges[:-1], edges[1:]):
        first = a == 0.0
        if first and C_V == 0:
            continue  # F > 0 on (0, first pole)
        lo = a + cfg.pole_guard * max(1.0, a) if not first else 0.0
        last = b == k_max
        hi = b - cfg.pole_guard * max(1.0, b)
        if last:
            # open interval without a closing pole: keep only if the sign changes
            if kernels.secular_function(hi, lengths, C_V) < 0 or hi <= lo:
                continue
        k = kernels.bisect_secular(lo, hi, lengths, C_V, cfg.bracket_tol, 200)
        if not math.isfinite(k):
            raise SolverError(f"secular root not bracketed on ({lo!r}, {hi!r})")
        found.append((float(k), 1, "A"))
    for p, S in groups:
        if len(set(S)) >= 2:
            found.append((p, len(set(S)) - 1, "B"))
    found.sort()
    # merge coincident values from both families
    merged: list[list] = []
    for k, mult, br in found:
        if merged and abs(k - merged[-1][0]) <= 1e-9 * max(1.0, k):
            merged[-1][1] += mult
            merged[-1][2] += br
        else:
            merged.append([k, mult, br])
    return [(k, m, br) for k, m, br in merged]


def secular_eigenvalues(G: MetricStarGraph, C_V: float, cfg: SecularSolveConfig | None = None,
                        with_eigenfunctions: bool = True) -> list[GraphEigenpair]:
    """Ascending eigenvalues (grouped by multiplicity) of the star-graph operator.

    Returns at least ``cfg.max_eigenvalues`` eigenvalues counted with
    multiplicity, unless an explicit ``cfg.k_max`` cuts the search short.
    """
    cfg = cfg or SecularSolveConfig()
    _check_cv(C_V)
    if cfg.k_max is not None:
        roots = _roots_up_to(G, C_V, cfg.k_max, cfg)
    else:
        # Weyl: about L k / pi eigenvalues below k
        k_max = math.pi * (cfg.max_eigenvalues + G.N + 2) / G.total_length
        while True:
            roots = _roots_up_to(G, C_V, k_max, cfg)
            if sum(m for _, m, _ in roots) >= cfg.max_eigenvalues + 1:
                break
            k_max *= 1.5
    out, count = [], 0
    for k, mult, br in roots:
        efs = graph_eigenfunctions(G, C_V, k, _branch=br, n=cfg.samples) if with_eigenfunctions else []
        out.append(GraphEigenpair(k * k, k, mult, br, efs))
        count += mult
        if count >= cfg.max_eigenvalues:
            break
    return out


def flat_eigenvalues(pairs: list[GraphEigenpair], m: int | None = None) -> np.ndarray:
    """Expand multiplicities into a flat ascending array."""
    vals = np.concatenate([[p.lam] * p.multiplicity for p in pairs]) if pairs else np.zeros(0)
    return vals if m is None else vals[:m]


def _locate_root(G, C_V, k, tol):
    """Snap ``k`` onto the nearest eigenvalue root; DomainError if none within tol."""
    cfg = SecularSolveConfig()
    roots = _roots_up_to(G, C_V, k * 1.01 + 1.0, cfg)
    best = min(roots, key=lambda r: abs(r[0] - k))
    if abs(best[0] - k) > tol * max(1.0, k):
        raise DomainError(f"k={k!r} is not an eigenvalue root (nearest {best[0]!r})")
    return best


def graph_eigenfunctions(G: MetricStarGraph, C_V: float, k: float, tol: float = 1e-8,
                         n: int = DEFAULT_SAMPLES, _branch: str | None = None) -> list[GraphFunction]:
    """L2(G)-orthonormal basis of the eigenspace with eigenvalue ``k^2``.

    ``k`` is snapped to the exact root when it lies within ``tol`` (relative)
    of one; otherwise :class:`DomainError`.
    """
    _check_cv(C_V)
    if _branch is None:
        k, _, _branch = _locate_root(G, C_V, k, tol)
    lengths = G.lengths
    grids = tuple(np.linspace(0.0, float(l), n) for l in lengths)
    out = []
    if "0" in _branch:
        c = 1.0 / math.sqrt(G.total_length)
        out.append(GraphFunction(grids, tuple(np.full(n, c) for _ in grids), c))
    if "A" in _branch:
        amp = 1.0 / np.cos(k * lengths)
        norm2 = np.sum(amp**2 * (lengths / 2 + np.sin(2 * k * lengths) / (4 * k)))
        amp = amp / math.sqrt(norm2)
        vals = tuple(a * np.cos(k * (l - g)) for a, l, g in zip(amp, lengths, grids))
        out.append(GraphFunction(grids, vals, float(amp[0] * math.cos(k * lengths[0]))))
    if "B" in _branch:
        cosk = np.cos(k * lengths)
        S = np.nonzero(np.abs(cosk) <= 1e-6)[0]
        # coefficients a_j = A_j sqrt(l_j/2) are L2-orthonormal; constraint sum A_j sin(k l_j) = 0
        c = np.sin(k * lengths[S]) / np.sqrt(lengths[S] / 2)
        basis = null_space(c[None, :])
        for col in basis.T:
            A = np.zeros(G.N)
            A[S] = col / np.sqrt(lengths[S] / 2)
            vals = tuple(A[j] * np.cos(k * (lengths[j] - grids[j])) for j in range(G.N))
            for j in range(G.N):
                vals[j][0] = 0.0  # exact zero at O
            out.append(GraphFunction(grids, vals, 0.0))
    return out


def graph_eigenfunction(G: MetricStarGraph, C_V: float, k: float, tol: float = 1e-8,
                        n: int = DEFAULT_SAMPLES) -> GraphFunction:
    """First basis function of the eigenspace at ``k`` (see :func:`graph_eigenfunctions`)."""
    return graph_eigenfunctions(G, C_V, k, tol=tol, n=n)[0]


def eigenfunction_residuals(G: MetricStarGraph, C_V: float, pair: GraphEigenpair) -> np.ndarray:
    """Max of ODE, Neumann and vertex-condition residuals per eigenfunction.

    Derivatives are evaluated analytically from ``A_j cos(k(l_j - s))`` fitted
    to the samples, so this measures the construction, not finite differences.
    """
    k, lam = pair.k, pair.lam
    res = []
    for f in pair.eigenfunctions:
        worst = 0.0
        dsum = 0.0
        for j, (g, v) in enumerate(zip(f.grids, f.values)):
            basis = np.cos(k * (G.lengths[j] - g))
            A = float(np.dot(basis, v) / np.dot(basis, basis))
            worst = max(worst, float(np.max(np.abs(v - A * basis))))
            # -psi'' - lam psi = A (k^2 - lam) cos(...) and psi'(l) = 0 exactly for this form
            worst = max(worst, abs(A) * abs(k * k - lam))
            dsum += A * k * math.sin(k * G.lengths[j])
        worst = max(worst, abs(dsum - C_V * f.vertex_value))
        res.append(worst)
    return np.array(res)


# ---------------------------------------------------------------------------
# independent oracle: P1 finite elements on the graph
# ---------------------------------------------------------------------------


def graph_fem_matrices(G: MetricStarGraph, C_V: float, h: float, split: int = 1):
    """Stiffness (with C_V on the junction diagonal) and mass on a P1 graph mesh.

    Dof 0 is the junction; edge ``j`` contributes ``split * ceil(l_j/h)``
    elements, so ``split=2`` bisects every element of the ``split=1`` mesh.
    """
    _check_cv(C_V)
    if not h > 0:
        raise DomainError("h must be positive")
    if h >= float(np.min(G.lengths)) / 4:
        raise DomainError(f"h={h} must be below min l_j / 4")
    rows, cols, kv, mv = [], [], [], []
    nxt = 1
    for l in G.lengths:
        ne = math.ceil(l / h - 1e-9) * split
        he = l / ne
        ids = np.concatenate([[0], np.arange(nxt, nxt + ne)])
        nxt += ne
        a, b = ids[:-1], ids[1:]
        for (p, q, ks, ms) in ((a, a, 1, 2), (b, b, 1, 2), (a, b, -1, 1), (b, a, -1, 1)):
            rows.append(p)
            cols.append(q)
            kv.append(np.full(ne, ks / he))
            mv.append(np.full(ne, ms * he / 6))
    r, c = np.concatenate(rows), np.concatenate(cols)
    K = sp.csr_matrix((np.concatenate(kv), (r, c)), shape=(nxt, nxt))
    M = sp.csr_matrix((np.concatenate(mv), (r, c)), shape=(nxt, nxt))
    K = K + sp.csr_matrix(([C_V], ([0], [0])), shape=(nxt, nxt))
    return K.tocsc(), M.tocsc()


def graph_fem_eigenvalues(G: MetricStarGraph, C_V: float, h: float, m: int, split: int = 1) -> np.ndarray:
    """The ``m`` smallest P1 graph-FEM eigenvalues, ascending."""
    K, M = graph_fem_matrices(G, C_V, h, split)
    n = K.shape[0]
    if m >= n - 1:
        raise DomainError("too many eigenvalues requested for this mesh")
    try:
        # a symmetric start vector would never see antisymmetric modes of an equal star
        v0 = np.random.default_rng(0).standard_normal(n)
        vals = eigsh(K, k=m, M=M, sigma=-1.0, which="LM", return_eigenvectors=False, v0=v0)
    except (RuntimeError, ValueError) as exc:  # singular factorization, ARPACK failure
        raise SolverError(f"graph FEM eigensolve failed: {exc}") from exc
    return np.sort(vals)


def graph_fem_richardson(G: MetricStarGraph, C_V: float, h: float, m: int) -> np.ndarray:
    """Richardson combination ``(4 lam(h/2) - lam(h)) / 3`` of the O(h^2) P1 error.

    The fine mesh bisects every coarse element, so the ratio is exactly 2
    even when ``l_j / h`` is not an integer.
    """
    coarse = graph_fem_eigenvalues(G, C_V, h, m)
    fine = graph_fem_eigenvalues(G, C_V, h, m, split=2)
    return (4 * fine - coarse) / 3
