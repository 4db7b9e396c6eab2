"""Metric star graphs, sampled functions on them and the limit energy.

A star graph has one central vertex ``O`` and ``N`` edges; edge ``j`` is the
interval ``[0, l_j]`` with ``s = 0`` at ``O``. Functions are stored as samples
on per-edge grids together with the value at ``O``.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import simpson

from .errors import DomainError, GeometryError

#: value returned by :func:`phi_limit` outside the form domain
INFINITY = math.inf

DEFAULT_SAMPLES = 1025


def rotation(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


@dataclass(frozen=True)
class MetricStarGraph:
    lengths: np.ndarray
    angles: np.ndarray
    directions: np.ndarray = field(repr=False)  # (N, 2, 2) rotations R_j

    @property
    def N(self) -> int:
        return len(self.lengths)

    @property
    def total_length(self) -> float:
        return float(np.sum(self.lengths))

    def unit_vector(self, j: int) -> np.ndarray:
        return self.directions[j][:, 0]

    def same_as(self, other: "MetricStarGraph") -> bool:
        return (
            self.N == other.N
            and np.array_equal(self.lengths, other.lengths)
            and np.array_equal(self.angles, other.angles)
        )


def build_star(lengths: Sequence[float], angles: Sequence[float]) -> MetricStarGraph:
    """Build a star graph from edge lengths and edge direction angles (radians).

    Raises
    ------
    DomainError
        empty input, mismatched counts, or a nonpositive length.
    GeometryError
        two edges pointing in the same direction.
    """
    lengths = np.asarray(lengths, dtype=float).reshape(-1)
    angles = np.asarray(angles, dtype=float).reshape(-1)
    if lengths.size == 0:
        raise DomainError("a star graph needs at least one edge")
    if lengths.size != angles.size:
        raise DomainError(f"{lengths.size} lengths but {angles.size} angles")
    if not np.all(np.isfinite(lengths)) or np.any(lengths <= 0):
        raise DomainError(f"edge lengths must be positive, got {lengths.tolist()}")
    if not np.all(np.isfinite(angles)):
        raise DomainError("edge angles must be finite")
    wrapped = np.mod(angles, 2 * math.pi)
    for i in range(len(wrapped)):
        for j in range(i + 1, len(wrapped)):
            d = abs(wrapped[i] - wrapped[j])
            if min(d, 2 * math.pi - d) < 1e-12:
                raise GeometryError(f"edges {i} and {j} share the direction {angles[i]!r}")
    dirs = np.stack([rotation(t) for t in angles])
    lengths.setflags(write=False)
    angles.setflags(write=False)
    dirs.setflags(write=False)
    return MetricStarGraph(lengths, angles, dirs)


def equal_star(n: int, length: float = 1.0) -> MetricStarGraph:
    """``n`` edges of equal length at equally spaced angles."""
    return build_star([length] * n, [2 * math.pi * j / n for j in range(n)])


@dataclass(frozen=True)
class LimitFormParams:
    C_V: float = 0.0

    def __post_init__(self):
        if not (self.C_V >= 0 and math.isfinite(self.C_V)):
            raise DomainError(f"C_V must be finite and nonnegative, got {self.C_V}")


@dataclass(frozen=True)
class GraphFunction:
    """Samples ``values[j]`` of a function on the grid ``grids[j]`` of edge j.

    ``vertex_value`` is the value at the junction ``O``.
    """

    grids: tuple
    values: tuple
    vertex_value: complex | float

    def __post_init__(self):
        if len(self.grids) != len(self.values):
            raise DomainError("one value array per edge grid required")
        for j, (g, v) in enumerate(zip(self.grids, self.values)):
            if g.ndim != 1 or g.shape != v.shape or g.size < 2:
                raise DomainError(f"edge {j}: grid and values must be matching 1-D arrays")
            if g[0] != 0.0 or np.any(np.diff(g) <= 0):
                raise DomainError(f"edge {j}: grid must be increasing and start at 0")

    @property
    def N(self) -> int:
        return len(self.grids)

    @property
    def is_complex(self) -> bool:
        return any(np.iscomplexobj(v) for v in self.values) or isinstance(self.vertex_value, complex)

    def junction_gap(self) -> float:
        """max_j |psi_j(0) - psi(O)|."""
        return max(abs(v[0] - self.vertex_value) for v in self.values)

    def is_continuous(self, tol: float = 1e-10) -> bool:
        return self.junction_gap() <= tol

    def on_graph(self, G: MetricStarGraph) -> bool:
        return self.N == G.N and all(
            abs(g[-1] - l) <= 1e-12 * max(1.0, l) for g, l in zip(self.grids, G.lengths)
        )

    def evaluate(self, j: int, s) -> np.ndarray:
        """Piecewise-linear interpolation of edge ``j`` at arclengths ``s``."""
        g, v = self.grids[j], self.values[j]
        s = np.asarray(s, dtype=float)
        if np.iscomplexobj(v):
            return np.interp(s, g, v.real) + 1j * np.interp(s, g, v.imag)
        return np.interp(s, g, v)

    def map(self, fn: Callable[[np.ndarray], np.ndarray]) -> "GraphFunction":
        return GraphFunction(
            tuple(self.grids), tuple(fn(v) for v in self.values), fn(np.asarray(self.vertex_value)).item()
        )

    def __mul__(self, c):
        return self.map(lambda v: v * c)

    __rmul__ = __mul__

    # --- CSV -------------------------------------------------------------

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["edge", "s", "value_re", "value_im"])
        z = complex(self.vertex_value)
        w.writerow([-1, repr(0.0), repr(z.real), repr(z.imag)])
        for j, (g, v) in enumerate(zip(self.grids, self.values)):
            vc = v.astype(complex)
            for s, val in zip(g, vc):
                w.writerow([j, repr(float(s)), repr(float(val.real)), repr(float(val.imag))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "GraphFunction":
        rows = list(csv.DictReader(io.StringIO(text)))
        vertex = None
        edges: dict[int, list] = {}
        for r in rows:
            e = int(r["edge"])
            val = complex(float(r["value_re"]), float(r["value_im"]))
            if e == -1:
                vertex = val
            else:
                edges.setdefault(e, []).append((float(r["s"]), val))
        if vertex is None:
            raise DomainError("CSV has no vertex row (edge=-1)")
        if sorted(edges) != list(range(len(edges))):
            raise DomainError("CSV edges must be numbered 0..N-1")
        grids, values = [], []
        for j in range(len(edges)):
            pts = edges[j]
            g = np.array([p[0] for p in pts])
            v = np.array([p[1] for p in pts])
            if not np.any(v.imag):
                v = v.real.copy()
            grids.append(g)
            values.append(v)
        if vertex.imag == 0 and not any(np.iscomplexobj(v) for v in values):
            vertex = vertex.real
        return cls(tuple(grids), tuple(values), vertex)


def sample(G: MetricStarGraph, fn: Callable[[int, np.ndarray], np.ndarray], vertex_value=None,
           n: int = DEFAULT_SAMPLES) -> GraphFunction:
    """Sample ``fn(j, s)`` on uniform grids with ``n`` points per edge.

    The vertex value defaults to ``fn(0, 0)``.
    """
    if n < 3:
        raise DomainError("need at least 3 samples per edge")
    grids = tuple(np.linspace(0.0, float(l), n) for l in G.lengths)
    values = tuple(np.asarray(fn(j, g)) * np.ones_like(g) for j, g in enumerate(grids))
    if vertex_value is None:
        vertex_value = values[0][0].item()
    return GraphFunction(grids, values, vertex_value)


def _check_pair(f: GraphFunction, g: GraphFunction, G: MetricStarGraph):
    if not (f.on_graph(G) and g.on_graph(G)):
        raise DomainError("functions do not live on the given graph")


def _integrate(y, x):
    if np.iscomplexobj(y):
        return simpson(y.real, x=x) + 1j * simpson(y.imag, x=x)
    return float(simpson(y, x=x))


def l2_inner(f: GraphFunction, g: GraphFunction, G: MetricStarGraph):
    """``sum_j int_0^{l_j} f_j conj(g_j) ds`` by composite Simpson.

    When the grids of an edge differ, ``g`` is linearly interpolated onto the
    grid of ``f``. Returns a float for real inputs and a complex otherwise.
    """
    _check_pair(f, g, G)
    total = 0.0
    for j in range(G.N):
        x = f.grids[j]
        gv = g.values[j] if np.array_equal(x, g.grids[j]) else g.evaluate(j, x)
        total = total + _integrate(f.values[j] * np.conj(gv), x)
    return total


def l2_norm(f: GraphFunction, G: MetricStarGraph) -> float:
    return math.sqrt(max(float(np.real(l2_inner(f, f, G))), 0.0))


def phi_kinetic(psi: GraphFunction) -> float:
    """``sum_j int |psi_j'|^2`` with second-order differences (no continuity check)."""
    total = 0.0
    for g, v in zip(psi.grids, psi.values):
        d = np.gradient(v, g, edge_order=2)
        total += float(simpson(np.abs(d) ** 2, x=g))
    return total


def phi_limit(psi: GraphFunction, params: LimitFormParams, G: MetricStarGraph,
              tol_cont: float = 1e-10) -> float:
    """Limit energy ``sum_j int |psi_j'|^2 + C_V |psi(O)|^2``.

    Returns :data:`INFINITY` when ``psi`` is not continuous at ``O`` (outside
    the form domain).
    """
    if not psi.on_graph(G):
        raise DomainError("function does not live on the given graph")
    if not psi.is_continuous(tol_cont):
        return INFINITY
    return phi_kinetic(psi) + params.C_V * abs(psi.vertex_value) ** 2


def graph_integral(G: MetricStarGraph, fn: Callable[[int, np.ndarray], np.ndarray], order: int = 40) -> float:
    """``int_G fn dmu`` by Gauss-Legendre on each edge (for smooth callables)."""
    x, w = np.polynomial.legendre.leggauss(order)
    total = 0.0
    for j, l in enumerate(G.lengths):
        s = 0.5 * l * (x + 1.0)
        total += 0.5 * l * float(np.sum(w * fn(j, s)))
    return total
