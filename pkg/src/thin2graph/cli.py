"""Command-line entry point ``thin2graph``.

Exit codes: 0 success, 1 invalid input (config, geometry, mesh, unknown
subcommand), 2 solver or quadrature failure. Output files are written to a
temporary name and renamed into place.
"""
from __future__ import annotations

import argparse
import csv
import io
import sys

import numpy as np

from .config import parse_config
from .errors import ConfigError, DomainError, GeometryError, MeshError, NumericsError, SolverError
from .fem2d import assemble, eval_phi_eps, solve_gevp
from .graph_spectra import SecularSolveConfig, secular_eigenvalues
from .harness import (
    atomic_write,
    default_recovery_psi,
    recovery_kinetic_target,
    recovery_sequence,
    run_convergence,
    write_report,
)
from .mesh2d import mesh_to_text, triangulate
from .star_graph import build_star
from .thin_domain import compute_C_V, project_points

VALIDATION_ERRORS = (ConfigError, DomainError, GeometryError, MeshError)
SOLVER_ERRORS = (SolverError, NumericsError)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(f"{self.format_usage()}{self.prog}: error: {message}\n")


def _float_list(text):
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    return buf.getvalue()


def _emit(text: str, path: str | None, out) -> None:
    if path:
        atomic_write(path, text)
    else:
        out.write(text)


def _config(args, **flags):
    return parse_config(args.config, flags)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_graph_spectrum(args, out):
    if args.config:
        cfg = parse_config(args.config, {"lengths": args.lengths, "angles": args.angles, "modes": args.modes})
        G = cfg.graph()
        C_V = args.cv if args.cv is not None else compute_C_V(cfg.potential())
        modes = cfg.modes
    else:
        if args.lengths is None:
            raise ConfigError("graph-spectrum needs --lengths or --config")
        n = len(args.lengths)
        angles = args.angles or tuple(2 * np.pi * j / n for j in range(n))
        G = build_star(args.lengths, angles)
        C_V = 0.0 if args.cv is None else args.cv
        modes = args.modes or 6
    pairs = secular_eigenvalues(G, C_V, SecularSolveConfig(max_eigenvalues=modes), with_eigenfunctions=False)
    rows, idx = [], 0
    for p in pairs:
        for _ in range(p.multiplicity):
            if idx < modes:
                rows.append((idx + 1, p.lam, p.multiplicity, p.k))
            idx += 1
    _emit(_csv(["index", "lambda", "multiplicity", "k"], rows), args.output, out)
    return 0


def cmd_thin_spectrum(args, out):
    cfg = _config(args, eps=args.eps, h=args.h, modes=args.modes, tol=args.tol)
    spec = cfg.thin_spec()
    mesh = triangulate(spec, cfg.mesh_size(), cfg.layers)
    asm = assemble(mesh, spec, cfg.potential())
    res = solve_gevp(asm.A, asm.M, cfg.modes, tol=cfg.tol, sigma=cfg.sigma)
    rows = [(i + 1, lam, r) for i, (lam, r) in enumerate(zip(res.eigenvalues, res.residuals))]
    _emit(_csv(["index", "lambda", "residual"], rows), args.output, out)
    return 0


def cmd_converge(args, out):
    cfg = _config(args, threads=args.threads, eps_list=args.eps_list)
    report = run_convergence(cfg.convergence_config())
    paths = write_report(report, args.out_dir, plot_data=args.plot_data)
    for p in paths[:2]:
        out.write(p + "\n")
    if len(paths) > 2:
        out.write(f"{len(paths) - 2} plot-data files in {args.out_dir}/plot\n")
    failed = [r for r in report.rows if r.status != "ok"]
    for r in failed:
        sys.stderr.write(f"eps={r.eps!r}: {r.error}\n")
    return 2 if failed else 0


def cmd_recovery_check(args, out):
    cfg = _config(args, eps_list=args.eps_list)
    V = cfg.potential()
    C_V = compute_C_V(V)
    G = cfg.graph()
    psi = default_recovery_psi(G)
    rows = []
    for eps in cfg.eps_list:
        spec = cfg.thin_spec(eps)
        h = cfg.mesh_size(eps)
        mesh = triangulate(spec, h, cfg.layers)
        asm = assemble(mesh, spec, V)
        e = eval_phi_eps(recovery_sequence(psi, spec, mesh), asm.K, asm.P, asm.M)
        rows.append((eps, h, e["phiK"], recovery_kinetic_target(psi, spec), e["phiV"],
                     C_V * abs(psi.vertex_value) ** 2))
    _emit(_csv(["eps", "h", "phiK", "phiK_expected", "phiV", "phiV_expected"], rows), args.output, out)
    return 0


def cmd_project(args, out):
    cfg = _config(args, eps=args.eps)
    spec = cfg.thin_spec()
    pts = []
    if args.points:
        try:
            pts = np.loadtxt(args.points, delimiter=",", ndmin=2)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read points from {args.points}: {exc}") from exc
    for p in args.point or []:
        pts = np.vstack([np.reshape(pts, (-1, 2)), np.reshape(p, (1, 2))]) if len(pts) else np.reshape(p, (1, 2))
    pts = np.reshape(np.asarray(pts, dtype=float), (-1, 2))
    if pts.shape[0] == 0:
        raise ConfigError("project needs --point or --points")
    edge, s = project_points(pts, spec)
    rows = [(float(x), float(y), "O" if e < 0 else int(e) + 1, float(v)) for (x, y), e, v in zip(pts, edge, s)]
    _emit(_csv(["x", "y", "edge", "s"], rows), args.output, out)
    return 0


def cmd_mesh_export(args, out):
    cfg = _config(args, eps=args.eps, h=args.h)
    mesh = triangulate(cfg.thin_spec(), cfg.mesh_size(), cfg.layers)
    _emit(mesh_to_text(mesh), args.output, out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="thin2graph", description="Thin star domains and their quantum-graph limit.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    g = sub.add_parser("graph-spectrum", help="eigenvalues of the star-graph operator")
    g.add_argument("--config")
    g.add_argument("--lengths", type=_float_list)
    g.add_argument("--angles", type=_float_list)
    g.add_argument("--cv", type=float, help="delta coupling strength C_V")
    g.add_argument("--modes", type=int)
    g.add_argument("--output")
    g.set_defaults(func=cmd_graph_spectrum)

    t = sub.add_parser("thin-spectrum", help="FEM eigenvalues on the thin domain")
    t.add_argument("--config", required=True)
    t.add_argument("--eps", type=float)
    t.add_argument("--h", type=float)
    t.add_argument("--modes", type=int)
    t.add_argument("--tol", type=float)
    t.add_argument("--output")
    t.set_defaults(func=cmd_thin_spectrum)

    c = sub.add_parser("converge", help="eps sweep with convergence diagnostics")
    c.add_argument("--config", required=True)
    c.add_argument("--eps-list", dest="eps_list", type=_float_list)
    c.add_argument("--out-dir", default=".")
    c.add_argument("--plot-data", action="store_true")
    c.add_argument("--threads", type=int)
    c.set_defaults(func=cmd_converge)

    r = sub.add_parser("recovery-check", help="recovery-sequence energy identities")
    r.add_argument("--config", required=True)
    r.add_argument("--eps-list", dest="eps_list", type=_float_list)
    r.add_argument("--output")
    r.set_defaults(func=cmd_recovery_check)

    pr = sub.add_parser("project", help="apply the projection f_eps to points")
    pr.add_argument("--config", required=True)
    pr.add_argument("--eps", type=float)
    pr.add_argument("--point", type=_float_list, action="append")
    pr.add_argument("--points", help="CSV file of x,y rows")
    pr.add_argument("--output")
    pr.set_defaults(func=cmd_project)

    m = sub.add_parser("mesh-export", help="write the triangulation as plain text")
    m.add_argument("--config", required=True)
    m.add_argument("--eps", type=float)
    m.add_argument("--h", type=float)
    m.add_argument("--output")
    m.set_defaults(func=cmd_mesh_export)
    return p


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        sys.stderr.write(str(exc))
        return 1
    if getattr(args, "func", None) is None:
        sys.stderr.write(parser.format_usage())
        return 1
    try:
        return args.func(args, out)
    except VALIDATION_ERRORS as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1
    except SOLVER_ERRORS as exc:
        sys.stderr.write(f"solver error: {exc}\n")
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
