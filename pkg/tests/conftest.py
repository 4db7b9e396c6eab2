import math
import os
import time

import numpy as np
import pytest

from thin2graph.harness import ConvergenceConfig, run_convergence
from thin2graph.star_graph import build_star, equal_star
from thin2graph.thin_domain import PotentialSpec, build_thin_domain, solve_amplitude

SEED = int(os.environ.get("THIN2GRAPH_SEED", "20240917"))


@pytest.fixture
def rng():
    return np.random.default_rng(SEED)


@pytest.fixture(scope="session")
def star3():
    return equal_star(3)


@pytest.fixture(scope="session")
def straight():
    return build_star([1.0, 1.0], [0.0, math.pi])


@pytest.fixture(scope="session")
def unit_potential():
    """Default cosine bump calibrated to C_V = 1."""
    return solve_amplitude(1.0, PotentialSpec())


@pytest.fixture(scope="session")
def spec3(star3):
    return build_thin_domain(star3, 0.1)


@pytest.fixture(scope="session")
def sweep_runs(star3, unit_potential):
    """The eps in {0.2, 0.1, 0.05}, h = eps/4 runs for C_V = 0 and C_V = 1, with wall times."""
    out, seconds = {}, {}
    for cv, V in ((0.0, PotentialSpec()), (1.0, unit_potential)):
        cfg = ConvergenceConfig(star3, eps_list=(0.2, 0.1, 0.05), potential=V, modes=5, threads=3)
        t0 = time.perf_counter()
        out[cv] = run_convergence(cfg)
        seconds[cv] = time.perf_counter() - t0
    return out, seconds


@pytest.fixture(scope="session")
def sweep_reports(sweep_runs):
    return sweep_runs[0]
