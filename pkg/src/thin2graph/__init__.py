"""Thin star domains, their quantum-graph limit, and numerical convergence checks."""
from .errors import (
    ConfigError,
    DomainError,
    GeometryError,
    MeshError,
    NumericsError,
    SolverError,
    Thin2GraphError,
)
from .star_graph import (
    INFINITY,
    GraphFunction,
    LimitFormParams,
    MetricStarGraph,
    build_star,
    equal_star,
    l2_inner,
    l2_norm,
    phi_limit,
    sample,
)
from .graph_spectra import (
    GraphEigenpair,
    SecularSolveConfig,
    graph_eigenfunction,
    graph_fem_eigenvalues,
    secular_eigenvalues,
)
from .thin_domain import (
    GraphPoint,
    PotentialSpec,
    ThinDomainSpec,
    build_thin_domain,
    compute_C_V,
    measure_total,
    potential_V_eps,
    project_f_eps,
    solve_amplitude,
)
from .mesh2d import Mesh2D, mesh_quality, triangulate
from .fem2d import EigenResult, SparseSymMatrix, assemble, eval_phi_eps, solve_gevp
from .harness import (
    ConvergenceConfig,
    ConvergenceReport,
    junction_energy,
    junction_mean,
    pullback,
    pushforward,
    recovery_sequence,
    richardson_extrapolate,
    run_convergence,
    transversal_energy,
)
from .config import RunConfig, parse_config

__version__ = "0.1.0"
