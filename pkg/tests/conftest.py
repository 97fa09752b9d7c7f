"""
Shared fixtures: small grids on which every operator is a dense matrix of at most a few
hundred rows, so the whole suite runs in seconds.
"""
import numpy as np
import pytest

from src.harmonic.approx_identity import build_family
from src.harmonic.calderon_formula import build_calderon_system
from src.harmonic.grid_quadrature import build_grid
from src.harmonic.reflection_core import generate_group, make_root_system
from src.harmonic.samples import mean_zero_bump, symmetric_bump
from src.harmonic.singular_ops import KernelSpec, build_discrete_sio

# A1 on [-4, 4] with 33 points: spacing 8/33, scales -1..4, S_4 is the invariant projector
A1_HALF_WIDTH = 4.0
A1_POINTS = 33


@pytest.fixture(scope="session")
def a1_group():
    return generate_group(make_root_system("A1"))


@pytest.fixture(scope="session")
def b2_group():
    return generate_group(make_root_system("B2"))


@pytest.fixture(scope="session")
def trivial_group():
    return generate_group(make_root_system("TRIVIAL", 1))


@pytest.fixture(scope="session")
def a1_grid(a1_group):
    return build_grid(A1_HALF_WIDTH, A1_POINTS, a1_group)


@pytest.fixture(scope="session")
def trivial_grid(trivial_group):
    return build_grid(A1_HALF_WIDTH, A1_POINTS, trivial_group)


@pytest.fixture(scope="session")
def tiny_grid(trivial_group):
    """Nine points on [-1, 1], small enough for brute-force oracles."""
    return build_grid(1.0, 9, trivial_group)


@pytest.fixture(scope="session")
def b2_grid(b2_group):
    return build_grid(2.0, 9, b2_group)


@pytest.fixture(scope="session")
def a1_family(a1_grid):
    return build_family(a1_grid, k_min=0, k_max=4)


@pytest.fixture(scope="session")
def a1_system(a1_family):
    return build_calderon_system(a1_family, M=2)


@pytest.fixture(scope="session")
def a1_sio(a1_group, a1_grid):
    return build_discrete_sio(KernelSpec(group=a1_group, k_min=0, k_max=4), a1_grid)


@pytest.fixture
def a1_bump(a1_grid):
    return symmetric_bump(a1_grid, center=0.5, width=1.0)


@pytest.fixture
def a1_wave(a1_grid):
    return mean_zero_bump(a1_grid, center=0.75, width=0.75)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# A1 on [-4, 4] with 129 points: spacing 8/129, grid identity scale 6. Scales 1 and 2 are
# resolved interior scales, and the k_max = 4 family stops short of the identity.
A1_FINE_POINTS = 129


@pytest.fixture(scope="session")
def a1_fine_grid(a1_group):
    return build_grid(A1_HALF_WIDTH, A1_FINE_POINTS, a1_group)


@pytest.fixture(scope="session")
def a1_fine_family(a1_fine_grid):
    return build_family(a1_fine_grid, k_min=0, k_max=4)


@pytest.fixture(scope="session")
def a1_fine_system(a1_fine_grid):
    return build_calderon_system(build_family(a1_fine_grid, k_min=0, k_max=6), M=3)
