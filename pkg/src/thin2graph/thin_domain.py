"""Thin star domains around a star graph (planar case, n = 2).

``Omega_eps`` is the union of the junction ``J_eps = (eps/eps0) J`` and the
tubes ``D_j = R_j([eps*l, l_j) x (-eps, eps))``. Lengths are measured with the
weight ``1 / (omega * eps)`` (``omega = 2``, the length of the unit interval), so
the total measure tends to the total length of the graph.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import integrate
from shapely.geometry import Point, Polygon, box

from . import kernels
from .errors import DomainError, GeometryError, NumericsError
from .star_graph import MetricStarGraph

OMEGA = 2.0  # |B_1| in dimension n - 1 = 1
JUNCTION = -1  # edge marker of the vertex O in GraphPoint


def shoelace(poly: np.ndarray) -> float:
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


@dataclass(frozen=True)
class ThinDomainSpec:
    graph: MetricStarGraph
    eps: float
    eps0: float
    l: float
    junction: np.ndarray = field(repr=False)  # reference polygon J (ccw, at scale eps0)
    mouth_vertices: tuple = field(repr=False)  # per edge: (index of R_j(eps0 l, -eps0), index of +)
    a: float = 0.0

    @property
    def weight(self) -> float:
        """Density ``1 / (omega eps^{n-1})`` of the measure with respect to dx."""
        return 1.0 / (OMEGA * self.eps)

    @property
    def scale(self) -> float:
        return self.eps / self.eps0

    @property
    def junction_eps(self) -> np.ndarray:
        return self.scale * self.junction

    @property
    def junction_area(self) -> float:
        return self.scale**2 * shoelace(self.junction)

    def tube_area(self, j: int) -> float:
        return (self.graph.lengths[j] - self.eps * self.l) * OMEGA * self.eps

    def with_eps(self, eps: float) -> "ThinDomainSpec":
        return build_thin_domain(self.graph, eps, self.eps0, self.l, self.junction, a=self.a)

    def tube_polygon(self, j: int, eps: float | None = None) -> np.ndarray:
        e = self.eps if eps is None else eps
        L = self.graph.lengths[j]
        loc = np.array([[e * self.l, -e], [L, -e], [L, e], [e * self.l, e]])
        return loc @ self.graph.directions[j].T

    @property
    def area(self) -> float:
        """``|Omega_eps|``; the pieces are disjoint by validation."""
        return self.junction_area + sum(self.tube_area(j) for j in range(self.graph.N))

    @property
    def perimeter(self) -> float:
        """Length of ``partial Omega_eps``.

        Each mouth (length ``2 eps``) leaves the junction boundary and the end
        face of its tube takes its place, so the two cancel.
        """
        J = self.junction_eps
        pj = float(np.sum(np.linalg.norm(J - np.roll(J, -1, axis=0), axis=1)))
        return pj + sum(2 * (L - self.eps * self.l) for L in self.graph.lengths)


@dataclass(frozen=True)
class GraphPoint:
    edge: int  # JUNCTION for the vertex O
    s: float


def auto_junction(G: MetricStarGraph, eps0: float, l: float):
    """Reference junction: tube mouths joined by chords in angular order.

    Gaps wider than a right angle between consecutive mouths are bridged by
    extra vertices on the circle through the mouth corners, so the polygon
    stays star-shaped around ``O``.
    """
    order = np.argsort(np.mod(G.angles, 2 * math.pi), kind="stable")
    half = math.atan2(1.0, l)
    radius = eps0 * math.hypot(l, 1.0)
    verts: list[np.ndarray] = []
    mouths = [None] * G.N
    for idx, j in enumerate(order):
        R = G.directions[j]
        lo = R @ np.array([eps0 * l, -eps0])
        hi = R @ np.array([eps0 * l, eps0])
        mouths[j] = (len(verts), len(verts) + 1)
        verts += [lo, hi]
        nxt = order[(idx + 1) % G.N]
        start = G.angles[j] + half
        stop = G.angles[nxt] - half
        gap = np.mod(stop - start, 2 * math.pi)
        if G.N == 1:
            gap = 2 * math.pi - 2 * half
        pieces = math.ceil(gap / (math.pi / 2) - 1e-9)
        for p in range(1, pieces):
            t = start + gap * p / pieces
            verts.append(radius * np.array([math.cos(t), math.sin(t)]))
    return np.array(verts), tuple(mouths)


def _find_mouths(G, poly, eps0, l, tol=1e-12):
    mouths = []
    k = len(poly)
    for j in range(G.N):
        R = G.directions[j]
        lo = R @ np.array([eps0 * l, -eps0])
        hi = R @ np.array([eps0 * l, eps0])
        i_lo = [i for i in range(k) if np.linalg.norm(poly[i] - lo) <= tol * max(1.0, eps0)]
        i_hi = [i for i in range(k) if np.linalg.norm(poly[i] - hi) <= tol * max(1.0, eps0)]
        if not i_lo or not i_hi or (i_lo[0] + 1) % k != i_hi[0]:
            raise GeometryError(f"junction polygon does not have the mouth of edge {j} as a ccw boundary segment")
        mouths.append((i_lo[0], i_hi[0]))
    return tuple(mouths)


def _validate(G, eps, eps0, l, poly):
    J = Polygon(poly)
    if not J.is_valid or shoelace(poly) <= 0:
        raise GeometryError("junction polygon must be simple and counter-clockwise")
    if not J.contains(Point(0.0, 0.0)):
        raise GeometryError("junction polygon must contain the origin")
    scale_tol = 1e-12 * eps0 * eps0
    # snapping keeps shared mouth edges from producing spurious slivers
    grid = 1e-13 * eps0
    for e in sorted({eps0, eps}):
        tubes = []
        for j in range(G.N):
            L = G.lengths[j]
            loc = np.array([[e * l, -e], [L, -e], [L, e], [e * l, e]])
            tubes.append(Polygon(loc @ G.directions[j].T))
        Je = Polygon(poly * (e / eps0))
        for j in range(G.N):
            if Je.intersection(tubes[j], grid_size=grid).area > scale_tol:
                raise GeometryError(f"junction overlaps tube {j} at eps={e}")
            for i in range(j):
                if tubes[i].intersection(tubes[j], grid_size=grid).area > scale_tol:
                    raise GeometryError(f"tubes {i} and {j} overlap at eps={e}")


def build_thin_domain(G: MetricStarGraph, eps: float, eps0: float = 0.25, l: float = 1.0,
                      junction: np.ndarray | str | None = "AUTO", a: float | None = None) -> ThinDomainSpec:
    """Validated thin-domain description.

    ``junction`` is the reference polygon ``J`` (ccw vertex list at scale
    ``eps0``) or ``"AUTO"``. ``a`` is the extent of the junction-diagnostic
    region ``J^a``; it defaults to ``2 l``.
    """
    if not (eps0 > 0 and 0 < eps <= eps0):
        raise DomainError(f"need 0 < eps <= eps0, got eps={eps}, eps0={eps0}")
    if not l > 0:
        raise DomainError("l must be positive")
    if not eps0 * l < float(np.min(G.lengths)):
        raise DomainError("eps0 * l must be below the shortest edge length")
    a = 2.0 * l if a is None else float(a)
    if not (l < a < float(np.min(G.lengths)) / eps0):
        raise DomainError(f"a={a} must lie in (l, min l_j / eps0) = ({l}, {float(np.min(G.lengths)) / eps0})")
    if G.N < 2 and (junction is None or isinstance(junction, str)):
        raise GeometryError("the automatic junction needs at least two edges")
    if junction is None or isinstance(junction, str):
        if junction not in (None, "AUTO"):
            raise DomainError(f"unknown junction spec {junction!r}")
        poly, mouths = auto_junction(G, eps0, l)
    else:
        poly = np.asarray(junction, dtype=float)
        if poly.ndim != 2 or poly.shape[1] != 2 or len(poly) < 3:
            raise DomainError("junction polygon must be a (k, 2) vertex array")
        mouths = _find_mouths(G, poly, eps0, l)
    _validate(G, eps, eps0, l, poly)
    poly = poly.copy()
    poly.setflags(write=False)
    return ThinDomainSpec(G, float(eps), float(eps0), float(l), poly, mouths, a)


def measure_total(spec: ThinDomainSpec) -> float:
    """``mu_eps(Omega_eps) = |J_eps| / (2 eps) + sum_j (l_j - eps l)``."""
    return spec.junction_area * spec.weight + float(np.sum(spec.graph.lengths - spec.eps * spec.l))


# ---------------------------------------------------------------------------
# projection onto the graph
# ---------------------------------------------------------------------------


def project_points(X: np.ndarray, spec: ThinDomainSpec, tol: float = 1e-12):
    """Vectorised projection ``f_eps``: arrays ``(edge, s)``.

    On tube ``j`` the arclength is the first coordinate of ``R_j^{-1} x``; on
    the junction it is the nearest point of the star ``{R_j (t, 0): 0 <= t <= eps l}``
    (smallest edge index on ties); ``edge == JUNCTION`` marks ``O``.
    """
    X = np.ascontiguousarray(np.atleast_2d(X), dtype=float)
    G = spec.graph
    edge, s = kernels.project_points_kernel(
        X, np.ascontiguousarray(G.directions[:, 0, 0]), np.ascontiguousarray(G.directions[:, 1, 0]),
        np.ascontiguousarray(G.lengths, dtype=float), spec.eps, spec.l,
        np.ascontiguousarray(spec.junction_eps), tol * max(1.0, spec.eps),
    )
    bad = np.nonzero(edge == -2)[0]
    if len(bad):
        raise DomainError(f"{len(bad)} point(s) outside Omega_eps, first {X[bad[0]].tolist()}")
    return edge, s


def project_f_eps(x: Sequence[float], spec: ThinDomainSpec) -> GraphPoint:
    edge, s = project_points(np.asarray(x, dtype=float).reshape(1, 2), spec)
    return GraphPoint(int(edge[0]), float(s[0]))


# ---------------------------------------------------------------------------
# potential
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PotentialSpec:
    """Nonnegative C^1 bump ``V`` at reference scale.

    ``kind="cosine"``: ``v0 cos^2(pi |z| / (2 rho))`` for ``|z| <= rho``.
    ``kind="box"``: ``v0 b(z1) b(z2)`` where ``b`` is 1 on ``[-c, c]`` and drops
    to 0 over a cosine ramp of width ``delta``; it integrates to
    ``v0 (2c + delta)^2``.
    """

    v0: float = 0.0
    rho: float = 0.8
    kind: str = "cosine"
    c: float = 0.3
    delta: float = 0.1

    def __post_init__(self):
        if not (self.v0 >= 0 and math.isfinite(self.v0)):
            raise DomainError("potential amplitude must be finite and >= 0")
        if self.kind not in ("cosine", "box"):
            raise DomainError(f"unknown potential kind {self.kind!r}")
        if self.kind == "cosine" and not self.rho > 0:
            raise DomainError("support radius must be positive")
        if self.kind == "box" and not (self.c >= 0 and self.delta > 0):
            raise DomainError("box potential needs c >= 0 and delta > 0")

    @property
    def support_radius(self) -> float:
        if self.kind == "cosine":
            return self.rho
        return (self.c + self.delta) * math.sqrt(2.0)

    @property
    def is_zero(self) -> bool:
        return self.v0 == 0.0

    def __call__(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        if self.kind == "cosine":
            r = np.hypot(z[..., 0], z[..., 1])
            return np.where(r < self.rho, self.v0 * np.cos(0.5 * math.pi * r / self.rho) ** 2, 0.0)
        return self.v0 * self._ramp(z[..., 0]) * self._ramp(z[..., 1])

    def _ramp(self, x):
        d = np.abs(x) - self.c
        inner = np.cos(0.5 * math.pi * np.clip(d, 0.0, self.delta) / self.delta) ** 2
        return np.where(d <= 0, 1.0, np.where(d < self.delta, inner, 0.0))

    def scaled(self, v0: float) -> "PotentialSpec":
        return PotentialSpec(v0, self.rho, self.kind, self.c, self.delta)


def validate_potential(V: PotentialSpec, spec: ThinDomainSpec) -> None:
    """Support of ``V`` inside ``eps0^{-1} J``."""
    J = Polygon(spec.junction / spec.eps0)
    if V.kind == "cosine":
        support = Point(0.0, 0.0).buffer(V.rho, 256)
    else:
        w = V.c + V.delta
        support = box(-w, -w, w, w)
    if not J.buffer(1e-12).contains(support):
        raise GeometryError("potential support is not inside the rescaled junction")


def potential_V_eps(x, spec: ThinDomainSpec, V: PotentialSpec) -> np.ndarray:
    """``V_eps(x) = V(x / eps) / eps``."""
    x = np.asarray(x, dtype=float)
    return V(x / spec.eps) / spec.eps


def compute_C_V(V: PotentialSpec, epsrel: float = 1e-10) -> float:
    """``C_V = (1/omega) int V dz`` by adaptive quadrature.

    The cosine bump is integrated in polar coordinates, the box separably
    with its ramp breakpoints marked.
    """
    if V.is_zero:
        return 0.0
    if V.kind == "cosine":
        val, err = integrate.dblquad(
            lambda r, t: r * float(V(np.array([r, 0.0]))),
            0.0, 2 * math.pi, 0.0, V.rho, epsabs=0.0, epsrel=epsrel,
        )
    else:
        w = V.c + V.delta
        pts = [-V.c, V.c]
        val, err = integrate.nquad(
            lambda x, y: float(V(np.array([x, y]))), [[-w, w], [-w, w]],
            opts=[{"points": pts, "epsabs": 0.0, "epsrel": epsrel, "limit": 200}] * 2,
        )
    if not (math.isfinite(val) and err <= max(1e3 * epsrel * abs(val), 1e-300)):
        raise NumericsError(f"C_V quadrature did not converge (value {val}, error {err})")
    return val / OMEGA


def cosine_bump_mass(rho: float) -> float:
    """``int cos^2(pi|z|/(2 rho)) dz = pi rho^2 (1/2 - 2/pi^2)`` over the disc."""
    return math.pi * rho * rho * (0.5 - 2.0 / math.pi**2)


def solve_amplitude(target_C_V: float, V: PotentialSpec) -> PotentialSpec:
    """Potential of the same shape whose ``C_V`` equals ``target_C_V``.

    ``C_V`` is linear in the amplitude, so one quadrature at unit amplitude
    fixes it.
    """
    if target_C_V < 0:
        raise DomainError("target C_V must be >= 0")
    unit = compute_C_V(V.scaled(1.0))
    return V.scaled(target_C_V / unit)


# ---------------------------------------------------------------------------
# quadrature on the thin domain (for the measure-convergence check)
# ---------------------------------------------------------------------------


def _triangle_rule(order: int):
    """Collapsed Gauss-Legendre rule on the reference triangle."""
    x, w = np.polynomial.legendre.leggauss(order)
    u = 0.5 * (x + 1)
    wu = 0.5 * w
    U, Vv = np.meshgrid(u, u, indexing="ij")
    W = np.outer(wu, wu) * (1 - U)
    pts = np.stack([U.ravel(), (Vv * (1 - U)).ravel()], axis=1)
    return pts, W.ravel()


def integrate_pullback(spec: ThinDomainSpec, psi, order: int = 24, refine: int = 6) -> float:
    """``int_{Omega_eps} psi(f_eps(x)) dmu_eps`` for a callable ``psi(j, s)``.

    Tubes reduce exactly to 1-D Gauss-Legendre along the edge; the junction
    is fanned from ``O`` and each fan triangle is split into ``refine^2``
    pieces carrying a collapsed Gauss rule.
    """
    G = spec.graph
    x, w = np.polynomial.legendre.leggauss(order)
    total = 0.0
    mouth = spec.eps * spec.l
    for j, L in enumerate(G.lengths):
        s = mouth + 0.5 * (L - mouth) * (x + 1)
        # (1/(2 eps)) * int_{-eps}^{eps} dt = 1
        total += 0.5 * (L - mouth) * float(np.sum(w * psi(j, s)))
    pts, wts = _triangle_rule(8)
    poly = spec.junction_eps
    sub = []
    for a in range(refine):
        for b in range(refine - a):
            sub.append(((a, b), (a + 1, b), (a, b + 1)))
            if a + b < refine - 1:
                sub.append(((a + 1, b), (a + 1, b + 1), (a, b + 1)))
    jsum = 0.0
    for i in range(len(poly)):
        A, B = poly[i], poly[(i + 1) % len(poly)]
        for tri in sub:
            P = np.array([(ia * A + ib * B) / refine for ia, ib in tri])
            e1, e2 = P[1] - P[0], P[2] - P[0]
            area2 = abs(e1[0] * e2[1] - e1[1] * e2[0])
            X = P[0] + pts[:, :1] * e1 + pts[:, 1:] * e2
            edge, s = project_points(X, spec, tol=1e-9)
            vals = np.empty(len(X))
            for jj in np.unique(edge):
                m = edge == jj
                vals[m] = psi(max(int(jj), 0), s[m])
            jsum += area2 * float(np.dot(wts, vals))
    return total + jsum * spec.weight


def gh_measure_error(spec: ThinDomainSpec, psi) -> float:
    """``|int psi o f_eps dmu_eps - int_G psi dmu|`` for a callable ``psi(j, s)``."""
    from .star_graph import graph_integral

    return abs(integrate_pullback(spec, psi) - graph_integral(spec.graph, psi))
