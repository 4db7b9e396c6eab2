"""Time each hot kernel in its numba and pure-numpy flavour.

    python benchmarks/bench_kernels.py [--eps 0.05] [--repeat 5]

The numba flavour is timed after one warm-up call, so compilation (or the
on-disk cache load) is excluded. Results of both flavours are compared as
a sanity check before timing.
"""
import argparse
import time

import numpy as np

from thin2graph import kernels
from thin2graph.fem2d import assemble
from thin2graph.mesh2d import triangulate
from thin2graph.star_graph import equal_star
from thin2graph.thin_domain import build_thin_domain


def _best(fn, args, repeat):
    fn(*args)
    best = float("inf")
    for _ in range(repeat):
        t = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t)
    return best


def _cases(eps):
    G = equal_star(3)
    spec = build_thin_domain(G, eps)
    mesh = triangulate(spec, eps / 4)
    nodes = np.ascontiguousarray(mesh.nodes)
    tris = np.ascontiguousarray(mesh.triangles, dtype=np.int64)
    asm = assemble(mesh, spec)
    A = asm.K + asm.M
    n = A.n
    Lp, parent = kernels.ldl_symbolic(n, A.indptr, A.indices)
    Li, Lx, D, _ = kernels.ldl_numeric(n, A.indptr, A.indices, A.data, Lp, parent)
    rng = np.random.default_rng(0)
    x = rng.standard_normal(n)
    B = rng.standard_normal((n, 4))
    X = nodes + 0.0
    G_ = spec.graph
    proj = (X, np.ascontiguousarray(G_.directions[:, 0, 0]), np.ascontiguousarray(G_.directions[:, 1, 0]),
            np.ascontiguousarray(G_.lengths), spec.eps, spec.l, np.ascontiguousarray(spec.junction_eps), 1e-9)
    lengths = np.array([1.0, 1.3, 0.7, 2.0])
    return n, {
        "p1_local_matrices": (nodes, tris),
        "symv": (A.indptr, A.indices, A.data, x),
        "project_points": proj,
        "ldl_numeric": (n, A.indptr, A.indices, A.data, Lp, parent),
        "ldl_solve": (Lp, Li, Lx, D, B),
        "bisect_secular": (0.0, 0.5 * np.pi / 2.0 - 1e-9, lengths, 1.0, 1e-12, 200),
    }


def _same(a, b):
    a = a if isinstance(a, tuple) else (a,)
    b = b if isinstance(b, tuple) else (b,)
    return all(np.allclose(np.asarray(p), np.asarray(q), rtol=1e-12, atol=1e-12, equal_nan=True)
               for p, q in zip(a, b))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--eps", type=float, default=0.05)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    n, cases = _cases(args.eps)
    print(f"3-star, eps={args.eps}, h=eps/4, {n} dofs")
    print(f"{'kernel':<20}{'numba [s]':>12}{'numpy [s]':>12}{'speed-up':>10}")
    for name, (fast, slow) in kernels.VARIANTS.items():
        a = cases[name]
        if name == "ldl_solve":
            ra, rb = a[4].copy(), a[4].copy()
            fast(*a[:4], ra)
            slow(*a[:4], rb)
            ok = np.allclose(ra, rb, rtol=1e-12, atol=1e-12)
            copy_b = lambda f: (lambda *z: f(*z[:4], z[4].copy()))  # noqa: E731
            tf = _best(copy_b(fast), a, args.repeat)
            ts = _best(copy_b(slow), a, 1)
        else:
            ok = _same(fast(*a), slow(*a))
            tf = _best(fast, a, args.repeat)
            ts = _best(slow, a, 1 if name.startswith("ldl") else args.repeat)
        flag = "" if ok else "  MISMATCH"
        print(f"{name:<20}{tf:>12.2e}{ts:>12.2e}{ts / tf:>9.1f}x{flag}")


if __name__ == "__main__":
    main()
