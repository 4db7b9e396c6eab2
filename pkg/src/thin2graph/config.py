"""Run configuration: INI-style sections ``graph``, ``domain``, ``potential``,
``solver`` and ``harness``, plus command-line overrides.

Every value is checked against the preconditions of the module that will
consume it before anything is computed; violations raise :class:`ConfigError`.
"""
from __future__ import annotations

import configparser
import io
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, DomainError, GeometryError, NumericsError
from .harness import ConvergenceConfig
from .star_graph import MetricStarGraph, build_star
from .thin_domain import PotentialSpec, ThinDomainSpec, build_thin_domain, solve_amplitude, validate_potential

SCHEMA = {
    "graph": {"lengths", "angles"},
    "domain": {"eps", "eps0", "l", "a", "junction"},
    "potential": {"kind", "v0", "c_v_target", "rho", "c", "delta"},
    "solver": {"h", "h_factor", "layers", "modes", "tol", "sigma"},
    "harness": {"eps_list", "heat_t", "heat_modes", "threads"},
}


def _floats(text: str, key: str) -> tuple:
    try:
        vals = tuple(float(v) for v in text.replace(";", ",").split(",") if v.strip())
    except ValueError as exc:
        raise ConfigError(f"{key}: expected a comma-separated list of numbers, got {text!r}") from exc
    if not vals:
        raise ConfigError(f"{key}: empty list")
    return vals


def _polygon(text: str):
    """``AUTO`` or ``x y; x y; ...`` at reference scale."""
    if text.strip().upper() == "AUTO":
        return "AUTO"
    try:
        pts = [[float(c) for c in p.split()] for p in text.split(";") if p.strip()]
        arr = np.array(pts, dtype=float)
    except ValueError as exc:
        raise ConfigError(f"domain.junction: cannot parse polygon {text!r}") from exc
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ConfigError("domain.junction: vertices must be 'x y' pairs separated by ';'")
    return arr


@dataclass(frozen=True)
class RunConfig:
    lengths: tuple
    angles: tuple
    eps: float = 0.1
    eps0: float = 0.25
    l: float = 1.0
    a: float = 2.0
    junction: object = field(default="AUTO", compare=False)
    kind: str = "cosine"
    v0: float = 0.0
    c_v_target: float | None = None
    rho: float = 0.8
    c: float = 0.3
    delta: float = 0.1
    h: float | None = None  # None: h_factor * eps
    h_factor: float = 0.25
    layers: int | None = None
    modes: int = 6
    tol: float = 1e-8
    sigma: float = -1.0
    eps_list: tuple = (0.2, 0.1, 0.05)
    heat_t: float = 0.5
    heat_modes: int = 5
    threads: int = 1

    # -- derived objects ------------------------------------------------

    def graph(self) -> MetricStarGraph:
        return build_star(self.lengths, self.angles)

    def potential(self) -> PotentialSpec:
        base = PotentialSpec(self.v0, self.rho, self.kind, self.c, self.delta)
        if self.c_v_target is None:
            return base
        return solve_amplitude(self.c_v_target, base.scaled(1.0))

    def thin_spec(self, eps: float | None = None) -> ThinDomainSpec:
        return build_thin_domain(self.graph(), self.eps if eps is None else eps, self.eps0, self.l,
                                 self.junction, a=self.a)

    def mesh_size(self, eps: float | None = None) -> float:
        if self.h is not None and eps is None:
            return self.h
        return self.h_factor * (self.eps if eps is None else eps)

    def convergence_config(self) -> ConvergenceConfig:
        return ConvergenceConfig(
            graph=self.graph(), eps_list=self.eps_list, eps0=self.eps0, l=self.l, a=self.a,
            junction=self.junction, potential=self.potential(), h_factor=self.h_factor, layers=self.layers,
            modes=self.modes, tol=self.tol, sigma=self.sigma, heat_t=self.heat_t,
            heat_modes=self.heat_modes, threads=self.threads,
        )

    def to_text(self) -> str:
        cp = configparser.ConfigParser()
        j = self.junction
        cp["graph"] = {"lengths": _join(self.lengths), "angles": _join(self.angles)}
        cp["domain"] = {"eps": repr(self.eps), "eps0": repr(self.eps0), "l": repr(self.l), "a": repr(self.a),
                        "junction": j if isinstance(j, str) else "; ".join(f"{float(x)!r} {float(y)!r}" for x, y in j)}
        pot = {"kind": self.kind, "rho": repr(self.rho), "c": repr(self.c), "delta": repr(self.delta)}
        if self.c_v_target is None:
            pot["v0"] = repr(self.v0)
        else:
            pot["c_v_target"] = repr(self.c_v_target)
        cp["potential"] = pot
        sol = {"h_factor": repr(self.h_factor), "modes": str(self.modes), "tol": repr(self.tol),
               "sigma": repr(self.sigma)}
        if self.h is not None:
            sol["h"] = repr(self.h)
        if self.layers is not None:
            sol["layers"] = str(self.layers)
        cp["solver"] = sol
        cp["harness"] = {"eps_list": _join(self.eps_list), "heat_t": repr(self.heat_t),
                         "heat_modes": str(self.heat_modes), "threads": str(self.threads)}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()


def _join(vals) -> str:
    return ", ".join(repr(float(v)) for v in vals)


_CONVERTERS = {
    "lengths": _floats, "angles": _floats, "eps_list": _floats,
    "junction": lambda t, k: _polygon(t),
    "kind": lambda t, k: t.strip().lower(),
    "layers": lambda t, k: int(t), "modes": lambda t, k: int(t), "heat_modes": lambda t, k: int(t),
    "threads": lambda t, k: int(t),
}


def _convert(key: str, text: str, where: str):
    fn = _CONVERTERS.get(key)
    try:
        return fn(text, where) if fn else float(text)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"{where}: cannot parse {text!r}") from exc


def read_config_text(text: str) -> dict:
    """Parse INI text into ``{field: value}`` with unknown sections/keys rejected."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    values: dict = {}
    for section in cp.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in cp.items(section):
            norm = key.lower()
            if norm not in SCHEMA[section]:
                raise ConfigError(f"unknown key {section}.{key}")
            values[norm] = _convert(norm, raw, f"{section}.{key}")
    return values


def parse_config(path: str | None = None, flags: dict | None = None, text: str | None = None) -> RunConfig:
    """Read ``path`` (or ``text``), apply non-None ``flags`` and validate.

    ``flags`` uses field names (``eps``, ``h``, ``modes``, ...).
    """
    values: dict = {}
    if text is None and path is not None:
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if text is not None:
        values.update(read_config_text(text))
    known = {k for keys in SCHEMA.values() for k in keys}
    for k, v in (flags or {}).items():
        if v is None:
            continue
        if k not in known:
            raise ConfigError(f"unknown key {k}")
        values[k] = v
    if "lengths" not in values:
        raise ConfigError("graph.lengths is required")
    if "angles" not in values:
        n = len(values["lengths"])
        values["angles"] = tuple(2 * math.pi * j / n for j in range(n))
    if "a" not in values:
        values["a"] = 2.0 * values.get("l", 1.0)
    for key in ("lengths", "angles", "eps_list"):
        if key in values:
            values[key] = tuple(float(v) for v in values[key])
    try:
        cfg = RunConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    validate(cfg)
    return cfg


def validate(cfg: RunConfig) -> None:
    """Check every precondition the pipeline will meet, naming the owner."""
    try:
        cfg.graph()
    except (DomainError, GeometryError) as exc:
        raise ConfigError(f"MetricStarGraph: {exc}") from exc
    if not (0 < cfg.eps <= cfg.eps0):
        raise ConfigError(f"ThinDomainSpec invariant 0 < eps <= eps0 violated (eps={cfg.eps}, eps0={cfg.eps0})")
    try:
        spec = cfg.thin_spec()
    except (DomainError, GeometryError) as exc:
        raise ConfigError(f"ThinDomainSpec: {exc}") from exc
    if cfg.kind not in ("cosine", "box"):
        raise ConfigError(f"PotentialSpec: unknown kind {cfg.kind!r}")
    if cfg.c_v_target is not None and cfg.v0 != 0.0:
        raise ConfigError("potential.v0 and potential.c_v_target are mutually exclusive")
    try:
        V = PotentialSpec(cfg.v0 if cfg.c_v_target is None else 1.0, cfg.rho, cfg.kind, cfg.c, cfg.delta)
        if cfg.c_v_target is not None and cfg.c_v_target < 0:
            raise DomainError("target C_V must be >= 0")
        if not V.is_zero:
            validate_potential(V, spec)
    except (DomainError, GeometryError, NumericsError) as exc:
        raise ConfigError(f"PotentialSpec: {exc}") from exc
    h = cfg.mesh_size()
    if not (0 < h <= cfg.eps):
        raise ConfigError(f"triangulate: need 0 < h <= eps (h={h}, eps={cfg.eps})")
    if not (0 < cfg.h_factor <= 1):
        raise ConfigError("triangulate: h_factor must lie in (0, 1] so that h <= eps")
    if cfg.layers is not None and cfg.layers < 2:
        raise ConfigError("triangulate: at least two transversal layers are required")
    if cfg.modes < 1:
        raise ConfigError("solve_gevp: modes must be >= 1")
    if not cfg.tol > 0:
        raise ConfigError("solve_gevp: tol must be positive")
    if not cfg.sigma < 0:
        raise ConfigError("solve_gevp: shift sigma must be negative")
    e = np.asarray(cfg.eps_list)
    if np.any(e <= 0) or np.any(np.diff(e) >= 0):
        raise ConfigError("run_convergence: eps_list must be positive and strictly decreasing")
    if np.any(e > cfg.eps0):
        raise ConfigError("ThinDomainSpec invariant 0 < eps <= eps0 violated in harness.eps_list")
    if cfg.threads < 1 or cfg.heat_modes < 1 or not cfg.heat_t > 0:
        raise ConfigError("run_convergence: threads and heat_modes must be >= 1, heat_t > 0")


def with_overrides(cfg: RunConfig, **flags) -> RunConfig:
    """Copy of ``cfg`` with non-None ``flags`` applied and revalidated."""
    new = replace(cfg, **{k: v for k, v in flags.items() if v is not None})
    validate(new)
    return new
