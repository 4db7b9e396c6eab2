"""Conforming triangulations of thin star domains.

Tubes get a structured grid of ``ceil((l_j - eps l) / h) x layers`` cells, each
split into two triangles. The junction polygon is triangulated coarsely (a
fan from ``O``, or ear clipping when the fan is invalid) and every coarse
triangle is subdivided uniformly into ``layers^2`` similar triangles, which
matches the tube nodes on the mouths and keeps the mesh conforming.
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import MeshError
from .thin_domain import ThinDomainSpec, shoelace

JUNCTION_TAG = 0
SIDE_WALL = -1  # boundary tag of Sigma_eps; end face of tube j has tag j


@dataclass(frozen=True)
class TubeGrid:
    """Node indices of tube ``j`` laid out as ``ids[i, m]`` (along, across)."""

    edge: int
    ids: np.ndarray
    s: np.ndarray  # arclength of column i
    t: np.ndarray  # transversal coordinate of row m


@dataclass(frozen=True)
class Mesh2D:
    nodes: np.ndarray
    triangles: np.ndarray
    tags: np.ndarray  # 0 junction, j + 1 tube j
    h: float = float("nan")
    tubes: tuple = field(default=(), repr=False)
    boundary_edges: np.ndarray = field(default=None, repr=False)
    boundary_tags: np.ndarray = field(default=None, repr=False)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def areas(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        e1, e2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    def region_area(self, tag: int) -> float:
        return float(np.sum(self.areas()[self.tags == tag]))


def _edges(tris):
    e = np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
    return np.sort(e, axis=1)


def boundary_edges(tris: np.ndarray) -> np.ndarray:
    e = _edges(tris)
    uniq, counts = np.unique(e, axis=0, return_counts=True)
    if np.any(counts > 2):
        raise MeshError("an edge is shared by more than two triangles")
    return uniq[counts == 1]


def angles_deg(nodes, tris) -> np.ndarray:
    p = nodes[tris]
    out = np.empty((len(tris), 3))
    for a in range(3):
        u = p[:, (a + 1) % 3] - p[:, a]
        v = p[:, (a + 2) % 3] - p[:, a]
        c = np.einsum("ij,ij->i", u, v) / (np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1))
        out[:, a] = np.degrees(np.arccos(np.clip(c, -1.0, 1.0)))
    return out


def mesh_quality(m: Mesh2D) -> dict:
    """Minimum angle, maximum aspect ratio and sizes; raises on degenerate triangles."""
    areas = m.areas()
    if np.any(areas <= 0):
        raise MeshError(f"{int(np.sum(areas <= 0))} triangle(s) with nonpositive area")
    p = m.nodes[m.triangles]
    lens = np.stack([np.linalg.norm(p[:, (a + 1) % 3] - p[:, a], axis=1) for a in range(3)], axis=1)
    # longest edge over the height onto it
    aspect = lens.max(axis=1) ** 2 / (2 * areas)
    return {
        "min_angle": float(angles_deg(m.nodes, m.triangles).min()),
        "max_aspect": float(aspect.max()),
        "n_nodes": m.n_nodes,
        "n_triangles": m.n_triangles,
    }


def euler_characteristic(m: Mesh2D) -> int:
    n_edges = len(np.unique(_edges(m.triangles), axis=0))
    return m.n_nodes - n_edges + m.n_triangles


class _Registry:
    def __init__(self):
        self.index: dict = {}
        self.coords: list = []

    def get(self, key, xy):
        i = self.index.get(key)
        if i is None:
            i = len(self.coords)
            self.index[key] = i
            self.coords.append(np.asarray(xy, dtype=float))
        return i


def _edge_key(a, b, k, r):
    """Key of the node at k/r of the way from coarse vertex a to b."""
    if k == 0:
        return ("v", a)
    if k == r:
        return ("v", b)
    return ("e", a, b, k) if a < b else ("e", b, a, r - k)


def _orient(P):
    return (P[1][0] - P[0][0]) * (P[2][1] - P[0][1]) - (P[2][0] - P[0][0]) * (P[1][1] - P[0][1])


def _ear_clip(poly):
    idx = list(range(len(poly)))
    tris = []
    guard = 0
    while len(idx) > 3:
        guard += 1
        if guard > 10 * len(poly) ** 2:
            raise MeshError("ear clipping failed on the junction polygon")
        for t in range(len(idx)):
            a, b, c = idx[t - 1], idx[t], idx[(t + 1) % len(idx)]
            if _orient(poly[[a, b, c]]) <= 0:
                continue
            ok = True
            for q in idx:
                if q in (a, b, c):
                    continue
                P = poly[q]
                if (_orient(np.array([poly[a], poly[b], P])) >= 0 and _orient(np.array([poly[b], poly[c], P])) >= 0
                        and _orient(np.array([poly[c], poly[a], P])) >= 0):
                    ok = False
                    break
            if ok:
                tris.append((a, b, c))
                idx.pop(t)
                break
    tris.append(tuple(idx))
    return tris


def _coarse_junction(poly, min_angle):
    """Coarse triangles over vertex list ``[O] + poly``; fan first, ear clipping second."""
    k = len(poly)
    verts = np.vstack([[0.0, 0.0], poly])
    fan = [(0, i + 1, (i + 1) % k + 1) for i in range(k)]
    ok = all(_orient(verts[list(t)]) > 0 for t in fan)
    if ok:
        ang = angles_deg(verts, np.array(fan))
        ok = ang.min() >= min_angle
    if ok:
        return verts, fan
    tris = [(a + 1, b + 1, c + 1) for a, b, c in _ear_clip(poly)]
    return verts, tris


def triangulate(spec: ThinDomainSpec, h: float, layers: int | None = None,
                min_angle: float = 20.0) -> Mesh2D:
    """Mesh ``Omega_eps`` with target size ``h`` and ``layers`` cells across each tube.

    ``layers`` defaults to ``max(2, ceil(2 eps / h))``.
    """
    eps = spec.eps
    if not h > 0:
        raise MeshError("h must be positive")
    if h > eps * (1 + 1e-12):
        raise MeshError(f"h={h} too large for eps={eps}: need h <= eps")
    r = max(2, math.ceil(2 * eps / h - 1e-9)) if layers is None else int(layers)
    if r < 2:
        raise MeshError("at least two transversal layers are required")
    G = spec.graph
    reg = _Registry()

    # junction
    poly = spec.junction_eps
    verts, coarse = _coarse_junction(poly, min_angle)
    tris: list = []
    tags: list = []
    for ci, (A, B, C) in enumerate(coarse):
        PA, PB, PC = verts[A], verts[B], verts[C]

        def node(i, j, A=A, B=B, C=C, PA=PA, PB=PB, PC=PC, ci=ci):
            xy = PA + (PB - PA) * (i / r) + (PC - PA) * (j / r)
            if j == 0:
                key = _edge_key(A, B, i, r)
            elif i == 0:
                key = _edge_key(A, C, j, r)
            elif i + j == r:
                key = _edge_key(B, C, j, r)
            else:
                key = ("t", ci, i, j)
            return reg.get(key, xy)

        for i in range(r):
            for j in range(r - i):
                tris.append((node(i, j), node(i + 1, j), node(i, j + 1)))
                tags.append(JUNCTION_TAG)
                if i + j < r - 1:
                    tris.append((node(i + 1, j), node(i + 1, j + 1), node(i, j + 1)))
                    tags.append(JUNCTION_TAG)

    # tubes
    tubes = []
    end_faces = []
    mouth = eps * spec.l
    t = -eps + 2 * eps * np.arange(r + 1) / r
    t[-1] = eps
    for j in range(G.N):
        L = float(G.lengths[j])
        nx = max(1, math.ceil((L - mouth) / h - 1e-9))
        s = mouth + (L - mouth) * np.arange(nx + 1) / nx
        s[-1] = L
        R = G.directions[j]
        lo, hi = spec.mouth_vertices[j]
        ids = np.empty((nx + 1, r + 1), dtype=np.int64)
        for i in range(nx + 1):
            for m in range(r + 1):
                xy = R @ np.array([s[i], t[m]])
                key = _edge_key(lo + 1, hi + 1, m, r) if i == 0 else ("tube", j, i, m)
                ids[i, m] = reg.get(key, xy)
        for i in range(nx):
            for m in range(r):
                a, b, c, d = ids[i, m], ids[i + 1, m], ids[i + 1, m + 1], ids[i, m + 1]
                tris += [(a, b, c), (a, c, d)]
                tags += [j + 1, j + 1]
        ids.setflags(write=False)
        tubes.append(TubeGrid(j, ids, s, t))
        end_faces.append(set(ids[-1].tolist()))

    nodes = np.array(reg.coords)
    tri = np.array(tris, dtype=np.int64)
    bedges = boundary_edges(tri)
    btags = np.full(len(bedges), SIDE_WALL, dtype=np.int64)
    for j, face in enumerate(end_faces):
        on = np.array([a in face and b in face for a, b in bedges])
        btags[on] = j
    mesh = Mesh2D(nodes, tri, np.array(tags, dtype=np.int64), float(h), tuple(tubes), bedges, btags)
    validate_mesh(mesh, spec, min_angle=min_angle)
    for arr in (mesh.nodes, mesh.triangles, mesh.tags):
        arr.setflags(write=False)
    return mesh


def validate_mesh(m: Mesh2D, spec: ThinDomainSpec | None = None, min_angle: float = 20.0,
                  area_tol: float = 1e-10) -> None:
    """Positive areas, conformity, minimum angle and (with ``spec``) area checks."""
    q = mesh_quality(m)
    if q["min_angle"] < min_angle:
        raise MeshError(f"minimum angle {q['min_angle']:.2f} deg below {min_angle} deg")
    if euler_characteristic(m) != 1:
        raise MeshError("mesh is not a topological disk")
    if spec is None:
        return
    total = float(np.sum(m.areas()))
    if abs(total - spec.area) > area_tol * max(1.0, spec.area):
        raise MeshError(f"mesh area {total!r} differs from |Omega_eps| = {spec.area!r}")
    be = boundary_edges(m.triangles)
    perim = float(np.sum(np.linalg.norm(m.nodes[be[:, 0]] - m.nodes[be[:, 1]], axis=1)))
    if abs(perim - spec.perimeter) > 1e-9 * max(1.0, spec.perimeter):
        raise MeshError("mesh boundary does not match the domain boundary (hanging nodes?)")
    if abs(m.region_area(JUNCTION_TAG) - spec.junction_area) > area_tol * max(1.0, spec.junction_area):
        raise MeshError("junction area mismatch")
    for j in range(spec.graph.N):
        if abs(m.region_area(j + 1) - spec.tube_area(j)) > area_tol * max(1.0, spec.tube_area(j)):
            raise MeshError(f"tube {j} area mismatch")


# ---------------------------------------------------------------------------
# plain-text export
# ---------------------------------------------------------------------------


def mesh_to_text(m: Mesh2D) -> str:
    buf = io.StringIO()
    buf.write(f"{m.n_nodes}\n")
    for x, y in m.nodes:
        buf.write(f"{float(x)!r} {float(y)!r}\n")
    buf.write(f"{m.n_triangles}\n")
    for (i, j, k), tag in zip(m.triangles, m.tags):
        buf.write(f"{i} {j} {k} {tag}\n")
    return buf.getvalue()


def mesh_from_text(text: str) -> Mesh2D:
    lines = text.splitlines()
    try:
        n = int(lines[0])
        nodes = np.array([[float(v) for v in ln.split()] for ln in lines[1:1 + n]], dtype=float).reshape(n, 2)
        nt = int(lines[1 + n])
        rows = np.array([[int(v) for v in ln.split()] for ln in lines[2 + n:2 + n + nt]], dtype=np.int64).reshape(nt, 4)
    except (ValueError, IndexError) as exc:
        raise MeshError(f"malformed mesh file: {exc}") from exc
    tri = rows[:, :3]
    if tri.size and (tri.min() < 0 or tri.max() >= n):
        raise MeshError("triangle references a missing node")
    return Mesh2D(nodes, tri, rows[:, 3], boundary_edges=boundary_edges(tri))
