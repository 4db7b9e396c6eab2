"""P1 finite elements for the weighted Neumann-plus-potential form on Omega_eps.

``K`` discretises ``int |grad u|^2 dmu_eps``, ``P`` discretises
``int V_eps |u|^2 dmu_eps`` and ``M`` the ``L2(dmu_eps)`` norm. The generalized
eigenproblem ``(K + P) v = lambda M v`` is solved by block shift-invert Lanczos
with full reorthogonalisation on top of a sparse LDL^T factorisation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import reverse_cuthill_mckee

from . import kernels
from .errors import DomainError, SolverError
from .mesh2d import Mesh2D
from .thin_domain import PotentialSpec, ThinDomainSpec, _triangle_rule


@dataclass(frozen=True)
class SparseSymMatrix:
    """Symmetric matrix stored as the lower triangle (diagonal included) in CSR."""

    n: int
    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray

    @classmethod
    def from_coo(cls, n, rows, cols, vals):
        """Sum duplicates in a fixed order; entries above the diagonal are dropped."""
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        vals = np.asarray(vals, dtype=float)
        keep = rows >= cols
        rows, cols, vals = rows[keep], cols[keep], vals[keep]
        order = np.lexsort((cols, rows))
        rows, cols, vals = rows[order], cols[order], vals[order]
        if len(rows):
            start = np.concatenate([[True], (np.diff(rows) != 0) | (np.diff(cols) != 0)])
            first = np.nonzero(start)[0]
            data = np.add.reduceat(vals, first)
            rows, cols = rows[first], cols[first]
        else:
            data = vals
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=n), out=indptr[1:])
        return cls(n, indptr, cols, data)

    @classmethod
    def from_scipy(cls, A):
        L = sp.tril(sp.csr_matrix(A)).tocsr()
        L.sum_duplicates()
        L.sort_indices()
        return cls(L.shape[0], L.indptr.astype(np.int64), L.indices.astype(np.int64), L.data.astype(float))

    def to_scipy(self):
        L = sp.csr_matrix((self.data, self.indices, self.indptr), shape=(self.n, self.n))
        return (L + sp.tril(L, -1).T).tocsr()

    def matvec(self, x):
        return kernels.symv(self.indptr, self.indices, self.data, np.ascontiguousarray(x, dtype=float))

    def quad(self, u) -> float:
        u = np.asarray(u, dtype=float)
        return float(u @ self.matvec(u))

    def scaled(self, c: float) -> "SparseSymMatrix":
        return SparseSymMatrix(self.n, self.indptr, self.indices, self.data * c)

    def __add__(self, other: "SparseSymMatrix") -> "SparseSymMatrix":
        return SparseSymMatrix.from_scipy(self.to_scipy() + other.to_scipy())

    def diagonal(self) -> np.ndarray:
        return self.to_scipy().diagonal()


@dataclass(frozen=True)
class Assembly:
    K: SparseSymMatrix
    P: SparseSymMatrix
    M: SparseSymMatrix

    @property
    def A(self) -> SparseSymMatrix:
        return self.K + self.P


@dataclass(frozen=True)
class EigenResult:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray  # columns, M-orthonormal
    residuals: np.ndarray


# ---------------------------------------------------------------------------
# assembly
# ---------------------------------------------------------------------------

_RULE_PTS, _RULE_W = _triangle_rule(5)


def _split4(P):
    a, b, c = P
    ab, bc, ca = 0.5 * (a + b), 0.5 * (b + c), 0.5 * (c + a)
    return [np.array(t) for t in ((a, ab, ca), (ab, b, bc), (ca, bc, c), (ab, bc, ca))]


def _rule_local(P, fn, bary):
    e1, e2 = P[1] - P[0], P[2] - P[0]
    area2 = abs(e1[0] * e2[1] - e1[1] * e2[0])
    X = P[0] + _RULE_PTS[:, :1] * e1 + _RULE_PTS[:, 1:] * e2
    lam = bary(X)  # (q, 3)
    wv = _RULE_W * fn(X) * area2
    return (lam * wv[:, None]).T @ lam


def _adaptive_local(P, fn, bary, tol, depth=0, max_depth=12, coarse=None):
    if coarse is None:
        coarse = _rule_local(P, fn, bary)
    kids = _split4(P)
    parts = [_rule_local(c, fn, bary) for c in kids]
    fine = sum(parts)
    if np.max(np.abs(fine - coarse)) <= tol or depth >= max_depth:
        return fine
    return sum(_adaptive_local(c, fn, bary, tol / 2, depth + 1, max_depth, pc) for c, pc in zip(kids, parts))


def _tri_distance_to_origin(P):
    # inside test, then distance to the three edges
    o = np.zeros(2)
    signs = []
    for a in range(3):
        A, B = P[a], P[(a + 1) % 3]
        signs.append((B[0] - A[0]) * (o[1] - A[1]) - (B[1] - A[1]) * (o[0] - A[0]))
    if all(s >= 0 for s in signs) or all(s <= 0 for s in signs):
        return 0.0
    best = math.inf
    for a in range(3):
        A, B = P[a], P[(a + 1) % 3]
        d = B - A
        t = min(max(-float(A @ d) / float(d @ d), 0.0), 1.0)
        best = min(best, float(np.linalg.norm(A + t * d)))
    return best


def potential_matrix(mesh: Mesh2D, spec: ThinDomainSpec, V: PotentialSpec, weight: float | None = None,
                     rtol: float = 1e-10) -> SparseSymMatrix:
    """``P_ab = int V_eps phi_a phi_b dmu_eps`` by adaptive element quadrature.

    Only elements meeting the support disc of ``V_eps`` are visited. Each is
    integrated with a collapsed Gauss rule and recursively split in four
    where the rule and its split disagree.
    """
    n = mesh.n_nodes
    weight = spec.weight if weight is None else weight
    if V.is_zero:
        return SparseSymMatrix.from_coo(n, [], [], [])
    radius = V.support_radius * spec.eps
    fn = lambda X: V(X / spec.eps) / spec.eps  # noqa: E731
    vmax = V.v0 / spec.eps
    rows, cols, vals = [], [], []
    for e, tri in enumerate(mesh.triangles):
        P = mesh.nodes[tri]
        if _tri_distance_to_origin(P) >= radius:
            continue
        T = np.vstack([P.T, np.ones(3)])
        Tinv = np.linalg.inv(T)

        def bary(X, Tinv=Tinv):
            return (Tinv @ np.vstack([X.T, np.ones(len(X))])).T

        area = 0.5 * abs(np.linalg.det(T))
        loc = _adaptive_local(P, fn, bary, rtol * vmax * area)
        for a in range(3):
            for b in range(3):
                rows.append(tri[a])
                cols.append(tri[b])
                vals.append(loc[a, b] * weight)
    return SparseSymMatrix.from_coo(n, rows, cols, vals)


def assemble(mesh: Mesh2D, spec: ThinDomainSpec, V: PotentialSpec | None = None,
             weight: float | None = None) -> Assembly:
    """Weighted P1 stiffness ``K``, potential ``P`` and mass ``M``."""
    weight = spec.weight if weight is None else float(weight)
    V = V or PotentialSpec()
    nodes = np.ascontiguousarray(mesh.nodes, dtype=float)
    tris = np.ascontiguousarray(mesh.triangles, dtype=np.int64)
    rows, cols, kv, mv = kernels.p1_local_matrices(nodes, tris)
    n = mesh.n_nodes
    K = SparseSymMatrix.from_coo(n, rows, cols, kv * weight)
    M = SparseSymMatrix.from_coo(n, rows, cols, mv * weight)
    P = potential_matrix(mesh, spec, V, weight)
    return Assembly(K, P, M)


def eval_phi_eps(u, K: SparseSymMatrix, P: SparseSymMatrix, M: SparseSymMatrix) -> dict:
    """Kinetic energy, potential energy and squared L2(dmu_eps) norm of a nodal field."""
    u = np.asarray(u, dtype=float)
    if u.shape != (K.n,):
        raise DomainError(f"field has {u.shape} values, mesh has {K.n} nodes")
    return {"phiK": K.quad(u), "phiV": P.quad(u), "norm2": M.quad(u)}


# ---------------------------------------------------------------------------
# LDL^T and shift-invert Lanczos
# ---------------------------------------------------------------------------


class LDLFactor:
    """Sparse ``L D L^T`` of an SPD matrix under reverse Cuthill-McKee ordering."""

    def __init__(self, A: SparseSymMatrix):
        full = A.to_scipy()
        perm = reverse_cuthill_mckee(full, symmetric_mode=True).astype(np.int64)
        Ap = SparseSymMatrix.from_scipy(full[perm][:, perm])
        n = A.n
        Lp, parent = kernels.ldl_symbolic(n, Ap.indptr, Ap.indices)
        Li, Lx, D, fail = kernels.ldl_numeric(n, Ap.indptr, Ap.indices, Ap.data, Lp, parent)
        if fail >= 0:
            raise SolverError(f"LDL^T breakdown at pivot {fail}: matrix not positive definite")
        self.n = n
        self.perm = perm
        self.Lp, self.Li, self.Lx, self.D = Lp, Li, Lx, D

    @property
    def nnz(self) -> int:
        return int(self.Lp[-1])

    def solve(self, B):
        B = np.asarray(B, dtype=float)
        vec = B.ndim == 1
        X = np.ascontiguousarray(B.reshape(self.n, -1)[self.perm])
        kernels.ldl_solve(self.Lp, self.Li, self.Lx, self.D, X)
        out = np.empty_like(X)
        out[self.perm] = X
        return out[:, 0] if vec else out


def _normalise_signs(V):
    idx = np.argmax(np.abs(V), axis=0)
    s = np.sign(V[idx, np.arange(V.shape[1])])
    s[s == 0] = 1.0
    return V * s


def solve_gevp(A: SparseSymMatrix, M: SparseSymMatrix, m: int, tol: float = 1e-8, sigma: float = -1.0,
               block: int = 4, max_basis: int | None = None, seed: int = 0) -> EigenResult:
    """The ``m`` smallest eigenpairs of ``A v = lambda M v``.

    Block Lanczos on ``(A - sigma M)^{-1} M`` in the ``M`` inner product, with
    the whole basis kept and reorthogonalised twice, so eigenvalues up to
    multiplicity ``block`` are resolved. Residuals are
    ``||A v - lambda M v||_2`` with ``v`` M-normalised.
    """
    n = A.n
    if not 1 <= m <= n:
        raise DomainError(f"cannot compute {m} eigenpairs of an order-{n} problem")
    if sigma >= 0:
        raise DomainError("shift must be negative so that A - sigma M is SPD")
    F = LDLFactor(A + M.scaled(-sigma))
    Mfull = M.to_scipy()
    Afull = A.to_scipy()
    rng = np.random.default_rng(seed)
    p = min(block, n)
    cap = n if max_basis is None else min(n, max_basis)
    Q = np.zeros((n, 0))
    MQ = np.zeros((n, 0))
    OQ = np.zeros((n, 0))
    T = np.zeros((0, 0))
    W = rng.standard_normal((n, p))
    best = None
    while True:
        new, mnew = [], []
        for c in range(W.shape[1]):
            w = W[:, c].copy()
            w0 = math.sqrt(max(float(w @ (Mfull @ w)), 0.0))
            for _ in range(2):
                if Q.shape[1]:
                    w -= Q @ (MQ.T @ w)
                for q, mq in zip(new, mnew):
                    w -= q * float(mq @ w)
            mw = Mfull @ w
            nw = math.sqrt(max(float(w @ mw), 0.0))
            if nw <= 1e-10 * max(w0, 1e-300):
                continue
            new.append(w / nw)
            mnew.append(mw / nw)
        if not new:
            if Q.shape[1] >= n:
                break
            W = rng.standard_normal((n, p))  # invariant subspace reached: restart with fresh directions
            continue
        Qn = np.stack(new, axis=1)
        MQn = np.stack(mnew, axis=1)
        OQn = F.solve(MQn)
        Tcross = MQ.T @ OQn
        Tnew = MQn.T @ OQn
        Tnew = 0.5 * (Tnew + Tnew.T)
        k0 = Q.shape[1]
        k1 = k0 + Qn.shape[1]
        T2 = np.zeros((k1, k1))
        T2[:k0, :k0] = T
        T2[:k0, k0:] = Tcross
        T2[k0:, :k0] = Tcross.T
        T2[k0:, k0:] = Tnew
        T = T2
        Q = np.hstack([Q, Qn])
        MQ = np.hstack([MQ, MQn])
        OQ = np.hstack([OQ, OQn])
        if Q.shape[1] >= m:
            theta, S = np.linalg.eigh(T)
            order = np.argsort(theta)[::-1][:m]
            theta, S = theta[order], S[:, order]
            lam = sigma + 1.0 / theta
            Y = Q @ S
            R = Afull @ Y - (Mfull @ Y) * lam
            res = np.linalg.norm(R, axis=0)
            best = (lam, Y, res)
            if np.all(res <= tol):
                break
        if Q.shape[1] >= cap:
            break
        W = OQn
    if best is None or not np.all(best[2] <= tol):
        got = None if best is None else best[2]
        raise SolverError(f"Lanczos did not converge within {Q.shape[1]} basis vectors; residuals {got}")
    lam, Y, res = best
    order = np.argsort(lam, kind="stable")
    return EigenResult(lam[order], _normalise_signs(Y[:, order]), res[order])
