"""Hot inner loops.

Every kernel exists in two flavours: a numba-compiled one and a pure
numpy/python one. The public names at the bottom of the module dispatch on
:data:`thin2graph._jit.USE_NUMBA`, which follows the
``THIN2GRAPH_DISABLE_NUMBA`` environment variable. Both flavours must return
identical results; ``tests/test_kernels.py`` checks that.
"""
import numpy as np

from ._jit import USE_NUMBA, njit

# ---------------------------------------------------------------------------
# P1 element matrices
# ---------------------------------------------------------------------------

_MASS_REF = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0


@njit
def _p1_local_numba(nodes, tris):
    m = tris.shape[0]
    rows = np.empty(9 * m, dtype=np.int64)
    cols = np.empty(9 * m, dtype=np.int64)
    kv = np.empty(9 * m)
    mv = np.empty(9 * m)
    gx = np.empty(3)
    gy = np.empty(3)
    for e in range(m):
        i0 = tris[e, 0]
        i1 = tris[e, 1]
        i2 = tris[e, 2]
        x0 = nodes[i0, 0]
        y0 = nodes[i0, 1]
        x1 = nodes[i1, 0]
        y1 = nodes[i1, 1]
        x2 = nodes[i2, 0]
        y2 = nodes[i2, 1]
        det = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
        area = 0.5 * det
        gx[0] = (y1 - y2) / det
        gx[1] = (y2 - y0) / det
        gx[2] = (y0 - y1) / det
        gy[0] = (x2 - x1) / det
        gy[1] = (x0 - x2) / det
        gy[2] = (x1 - x0) / det
        for a in range(3):
            for b in range(3):
                p = 9 * e + 3 * a + b
                rows[p] = tris[e, a]
                cols[p] = tris[e, b]
                kv[p] = area * (gx[a] * gx[b] + gy[a] * gy[b])
                mv[p] = area * (2.0 if a == b else 1.0) / 12.0
    return rows, cols, kv, mv


def _p1_local_numpy(nodes, tris):
    p = nodes[tris]  # (m, 3, 2)
    x, y = p[..., 0], p[..., 1]
    det = (x[:, 1] - x[:, 0]) * (y[:, 2] - y[:, 0]) - (x[:, 2] - x[:, 0]) * (y[:, 1] - y[:, 0])
    area = 0.5 * det
    gx = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1) / det[:, None]
    gy = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1) / det[:, None]
    kloc = area[:, None, None] * (gx[:, :, None] * gx[:, None, :] + gy[:, :, None] * gy[:, None, :])
    mloc = area[:, None, None] * _MASS_REF[None]
    rows = np.repeat(tris, 3, axis=1).reshape(-1).astype(np.int64)
    cols = np.tile(tris, (1, 3)).reshape(-1).astype(np.int64)
    return rows, cols, kloc.reshape(-1), mloc.reshape(-1)


# ---------------------------------------------------------------------------
# symmetric matrix stored as lower-triangle CSR
# ---------------------------------------------------------------------------


@njit
def _symv_numba(indptr, indices, data, x):
    n = indptr.shape[0] - 1
    y = np.zeros(n)
    for i in range(n):
        acc = 0.0
        xi = x[i]
        for p in range(indptr[i], indptr[i + 1]):
            j = indices[p]
            v = data[p]
            acc += v * x[j]
            if j != i:
                y[j] += v * xi
        y[i] += acc
    return y


def _symv_numpy(indptr, indices, data, x):
    n = indptr.shape[0] - 1
    rows = np.repeat(np.arange(n), np.diff(indptr))
    off = indices != rows
    y = np.bincount(rows, weights=data * x[indices], minlength=n)
    y += np.bincount(indices[off], weights=data[off] * x[rows[off]], minlength=n)
    return y


# ---------------------------------------------------------------------------
# sparse LDL^T (up-looking, elimination tree); input is the lower triangle in
# CSR, which is the upper triangle in CSC column by column.
# ---------------------------------------------------------------------------


@njit
def _ldl_symbolic(n, Ap, Ai):
    parent = np.full(n, -1, dtype=np.int64)
    flag = np.empty(n, dtype=np.int64)
    lnz = np.zeros(n, dtype=np.int64)
    for k in range(n):
        flag[k] = k
        for p in range(Ap[k], Ap[k + 1]):
            i = Ai[p]
            if i < k:
                while flag[i] != k:
                    if parent[i] == -1:
                        parent[i] = k
                    lnz[i] += 1
                    flag[i] = k
                    i = parent[i]
    Lp = np.zeros(n + 1, dtype=np.int64)
    for k in range(n):
        Lp[k + 1] = Lp[k] + lnz[k]
    return Lp, parent


@njit
def _ldl_numeric(n, Ap, Ai, Ax, Lp, parent):
    nnz = Lp[n]
    Li = np.empty(nnz, dtype=np.int64)
    Lx = np.empty(nnz)
    D = np.empty(n)
    Y = np.zeros(n)
    pattern = np.empty(n, dtype=np.int64)
    flag = np.empty(n, dtype=np.int64)
    lnz = np.zeros(n, dtype=np.int64)
    for k in range(n):
        top = n
        flag[k] = k
        for p in range(Ap[k], Ap[k + 1]):
            i = Ai[p]
            if i <= k:
                Y[i] += Ax[p]
                ln = 0
                while flag[i] != k:
                    pattern[ln] = i
                    ln += 1
                    flag[i] = k
                    i = parent[i]
                while ln > 0:
                    top -= 1
                    ln -= 1
                    pattern[top] = pattern[ln]
        D[k] = Y[k]
        Y[k] = 0.0
        while top < n:
            i = pattern[top]
            yi = Y[i]
            Y[i] = 0.0
            p2 = Lp[i] + lnz[i]
            for p in range(Lp[i], p2):
                Y[Li[p]] -= Lx[p] * yi
            lki = yi / D[i]
            D[k] -= lki * yi
            Li[p2] = k
            Lx[p2] = lki
            lnz[i] += 1
            top += 1
        if not D[k] > 0.0:
            return Li, Lx, D, k
    return Li, Lx, D, -1


@njit
def _ldl_solve(Lp, Li, Lx, D, B):
    """Solve L D L^T X = B in place for a 2-D right-hand side block."""
    n = D.shape[0]
    ncol = B.shape[1]
    for c in range(ncol):
        for j in range(n):
            xj = B[j, c]
            for p in range(Lp[j], Lp[j + 1]):
                B[Li[p], c] -= Lx[p] * xj
        for j in range(n):
            B[j, c] /= D[j]
        for j in range(n - 1, -1, -1):
            acc = B[j, c]
            for p in range(Lp[j], Lp[j + 1]):
                acc -= Lx[p] * B[Li[p], c]
            B[j, c] = acc
    return B


# ---------------------------------------------------------------------------
# projection of points of the thin domain onto the star graph
# ---------------------------------------------------------------------------


@njit
def _inside_polygon(px, py, poly, tol):
    k = poly.shape[0]
    inside = False
    for a in range(k):
        b = (a + 1) % k
        ax = poly[a, 0]
        ay = poly[a, 1]
        bx = poly[b, 0]
        by = poly[b, 1]
        dx = bx - ax
        dy = by - ay
        ll = dx * dx + dy * dy
        t = ((px - ax) * dx + (py - ay) * dy) / ll
        if t < 0.0:
            t = 0.0
        elif t > 1.0:
            t = 1.0
        qx = ax + t * dx - px
        qy = ay + t * dy - py
        if qx * qx + qy * qy <= tol * tol:
            return True
        if (ay > py) != (by > py):
            xc = ax + (py - ay) * dx / dy
            if px < xc:
                inside = not inside
    return inside


@njit
def _project_numba(X, cs, sn, lengths, eps, ell, poly, tol):
    npts = X.shape[0]
    ne = lengths.shape[0]
    edge = np.full(npts, -2, dtype=np.int64)
    s = np.zeros(npts)
    mouth = eps * ell
    for p in range(npts):
        x = X[p, 0]
        y = X[p, 1]
        found = False
        for j in range(ne):
            y1 = cs[j] * x + sn[j] * y
            y2 = -sn[j] * x + cs[j] * y
            if y1 >= mouth - tol and y1 <= lengths[j] + tol and abs(y2) <= eps + tol:
                edge[p] = j
                s[p] = min(max(y1, mouth), lengths[j])
                found = True
                break
        if found:
            continue
        if not _inside_polygon(x, y, poly, tol):
            continue
        best = np.inf
        for j in range(ne):
            y1 = cs[j] * x + sn[j] * y
            y2 = -sn[j] * x + cs[j] * y
            t = min(max(y1, 0.0), mouth)
            d = (y1 - t) ** 2 + y2 * y2
            if d < best:
                best = d
                edge[p] = j
                s[p] = t
        if s[p] == 0.0:
            edge[p] = -1
    return edge, s


def _inside_polygon_numpy(P, poly, tol):
    inside = np.zeros(len(P), dtype=bool)
    near = np.zeros(len(P), dtype=bool)
    px, py = P[:, 0], P[:, 1]
    for a in range(len(poly)):
        ax, ay = poly[a]
        bx, by = poly[(a + 1) % len(poly)]
        dx, dy = bx - ax, by - ay
        t = np.clip(((px - ax) * dx + (py - ay) * dy) / (dx * dx + dy * dy), 0.0, 1.0)
        near |= (ax + t * dx - px) ** 2 + (ay + t * dy - py) ** 2 <= tol * tol
        crosses = (ay > py) != (by > py)
        with np.errstate(divide="ignore", invalid="ignore"):
            xc = ax + (py - ay) * dx / dy
        inside ^= crosses & (px < xc)
    return inside | near


def _project_numpy(X, cs, sn, lengths, eps, ell, poly, tol):
    npts = len(X)
    edge = np.full(npts, -2, dtype=np.int64)
    s = np.zeros(npts)
    mouth = eps * ell
    y1 = X[:, :1] * cs[None, :] + X[:, 1:] * sn[None, :]
    y2 = -X[:, :1] * sn[None, :] + X[:, 1:] * cs[None, :]
    in_tube = (y1 >= mouth - tol) & (y1 <= lengths[None, :] + tol) & (np.abs(y2) <= eps + tol)
    has_tube = in_tube.any(axis=1)
    j = np.argmax(in_tube, axis=1)
    rows = np.nonzero(has_tube)[0]
    edge[rows] = j[rows]
    s[rows] = np.clip(y1[rows, j[rows]], mouth, lengths[j[rows]])

    rest = np.nonzero(~has_tube)[0]
    if len(rest):
        ok = _inside_polygon_numpy(X[rest], poly, tol)
        rest = rest[ok]
        t = np.clip(y1[rest], 0.0, mouth)
        d = (y1[rest] - t) ** 2 + y2[rest] ** 2
        jb = np.argmin(d, axis=1)  # first minimum: smallest edge index on ties
        edge[rest] = jb
        s[rest] = t[np.arange(len(rest)), jb]
        edge[rest[s[rest] == 0.0]] = -1
    return edge, s


# ---------------------------------------------------------------------------
# secular function of the star graph and bisection
# ---------------------------------------------------------------------------


@njit
def _secular(k, lengths, cv):
    acc = 0.0
    for j in range(lengths.shape[0]):
        acc += k * np.tan(k * lengths[j])
    return acc - cv


@njit
def _bisect_secular(lo, hi, lengths, cv, tol, maxiter):
    flo = _secular(lo, lengths, cv)
    fhi = _secular(hi, lengths, cv)
    if flo > 0.0 or fhi < 0.0:
        return np.nan
    for _ in range(maxiter):
        mid = 0.5 * (lo + hi)
        if hi - lo <= tol:
            break
        fm = _secular(mid, lengths, cv)
        if fm == 0.0:
            return mid
        if fm < 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

p1_local_matrices = _p1_local_numba if USE_NUMBA else _p1_local_numpy
symv = _symv_numba if USE_NUMBA else _symv_numpy
project_points_kernel = _project_numba if USE_NUMBA else _project_numpy
ldl_symbolic = _ldl_symbolic
ldl_numeric = _ldl_numeric
ldl_solve = _ldl_solve
secular_function = _secular
bisect_secular = _bisect_secular

# explicit variants for benchmarks and equivalence tests
VARIANTS = {
    "p1_local_matrices": (_p1_local_numba, _p1_local_numpy),
    "symv": (_symv_numba, _symv_numpy),
    "project_points": (_project_numba, _project_numpy),
    "ldl_numeric": (_ldl_numeric, _ldl_numeric.py_func),
    "ldl_solve": (_ldl_solve, _ldl_solve.py_func),
    "bisect_secular": (_bisect_secular, _bisect_secular.py_func),
}
