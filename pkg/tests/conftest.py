import functools

import numpy as np
import pytest
from hypothesis import settings

from geodesic_ot.config import GEODESIC_PRESETS
from geodesic_ot.geodesic_bvp import GeodesicProblem, solve_geodesic
from geodesic_ot.kernel_expr import parse_kernel

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")


@functools.lru_cache(maxsize=None)
def _solve_example(name, kind):
    cfg = GEODESIC_PRESETS[name]
    k = parse_kernel(cfg["kernel"], len(cfg["a"]))
    p = GeodesicProblem(np.array(cfg["a"]), np.array(cfg["b"]), k, kind)
    traj, trace = solve_geodesic(p)
    return k, traj, trace


@pytest.fixture(scope="session")
def example_solution():
    """``example_solution(name, kind) -> (kernel, trajectory, trace)``, cached per session."""
    return _solve_example


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
