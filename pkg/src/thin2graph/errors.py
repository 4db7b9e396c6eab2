"""Exception hierarchy shared by every module."""


class Thin2GraphError(Exception):
    """Base class for all package errors."""


class DomainError(Thin2GraphError, ValueError):
    """An argument lies outside the domain of the operation."""


class GeometryError(Thin2GraphError, ValueError):
    """Invalid graph or thin-domain geometry (overlaps, duplicate directions)."""


class MeshError(Thin2GraphError):
    """Mesh generation failed or a mesh violates its invariants."""


class SolverError(Thin2GraphError, RuntimeError):
    """Root bracketing, factorization or eigen-iteration failure."""


class NumericsError(Thin2GraphError, RuntimeError):
    """Quadrature did not reach the requested accuracy."""


class ConfigError(Thin2GraphError, ValueError):
    """Bad run configuration."""
