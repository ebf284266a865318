import time

import numpy as np
import pytest

from stokestrack.control import PoseGrid, build_control_basis, build_control_law
from stokestrack.geometry import DomainGeometry, Pose, SolidShape
from stokestrack.stokes import FluidSystem, SolverConfig

# coarse discretization for unit tests that only need consistency, not accuracy
COARSE = SolverConfig(solid_nodes=(12, 24), outer_nodes=(24, 48), solid_sources=120, outer_sources=500)


@pytest.fixture(scope="session")
def domain():
    return DomainGeometry()


@pytest.fixture(scope="session")
def sphere():
    return SolidShape.sphere(0.1, 1.0)


@pytest.fixture(scope="session")
def config():
    return SolverConfig()


@pytest.fixture(scope="session")
def coarse():
    return COARSE


@pytest.fixture(scope="session")
def centred_system(sphere, domain, config):
    return FluidSystem(sphere, Pose(np.zeros(3)), domain, config)


@pytest.fixture(scope="session")
def default_grid():
    return PoseGrid([-0.35, -0.35, -0.1], [0.35, 0.35, 0.1], (3, 3, 3))


@pytest.fixture(scope="session")
def default_law(sphere, domain, config, default_grid):
    """The default 3^3 law with 24 fields, and its construction time in seconds."""
    start = time.perf_counter()
    basis = build_control_basis(domain, config, 24)
    law = build_control_law(sphere, domain, config, basis, default_grid, eps=1e-3)
    return law, time.perf_counter() - start


@pytest.fixture(scope="session")
def coarse_law(sphere, domain):
    basis = build_control_basis(domain, COARSE, 12)
    grid = PoseGrid([-0.35, -0.35, -0.1], [0.35, 0.35, 0.1], (2, 2, 2))
    return build_control_law(sphere, domain, COARSE, basis, grid, eps=1e-3)
