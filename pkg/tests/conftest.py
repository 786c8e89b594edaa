import numpy as np
import pytest

from rirsim.grid import REDUCED_GRID, build_grid, thermal_distribution
from rirsim.params import default_params


@pytest.fixture(scope="session")
def params():
    return default_params()


@pytest.fixture(scope="session")
def grid():
    return build_grid(*REDUCED_GRID)


@pytest.fixture(scope="session")
def pi_th(params, grid):
    return thermal_distribution(grid, params.sigma_p)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
