import numpy as np
import pytest

from eitmem.fields import SampledPulse
from eitmem.medium import MediumParams, rabi_for_transit
from eitmem.shapes import constant_control, gaussian
from eitmem.solver import SolverGrid


@pytest.fixture
def medium6():
    """Shallow medium without spin decay"""
    return MediumParams(alpha_L=6.0, gamma_s=0.0)


@pytest.fixture
def medium24():
    return MediumParams(alpha_L=24.0)


@pytest.fixture
def desk_grid():
    return SolverGrid(nz=64, nt_per_us=50.0)


@pytest.fixture
def coarse_grid():
    return SolverGrid(nz=32, nt_per_us=20.0)


@pytest.fixture
def ramp():
    return SampledPulse(0.0, 3.0, [0.0, 1.0, 2.0, 3.0])


@pytest.fixture
def writing_setup(medium6, desk_grid):
    """Gaussian input and constant control giving a 1 μs transit, 6 μs window"""
    rabi = rabi_for_transit(1.0, medium6)
    n = desk_grid.time_axis(-6.0, 0.0).size
    signal = gaussian(6.0, n)
    control = constant_control(rabi, -6.0, 0.0, n)
    return signal, control, rabi


@pytest.fixture
def rng():
    return np.random.default_rng(0)
