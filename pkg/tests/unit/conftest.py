import math

import numpy as np
import pytest

from squeezelab.processor.grid import Grid1D, PhysConstants
from squeezelab.processor.potentials import HarmonicPotential
from squeezelab.processor.state_factory import gaussian_profile, sech2_profile

GROUND_DQ = 1.0 / math.sqrt(2.0)


@pytest.fixture
def constants():
    return PhysConstants()


@pytest.fixture
def grid():
    return Grid1D(x_min=-20.0, x_max=20.0, n_points=1024)


@pytest.fixture
def wide_grid():
    return Grid1D(x_min=-40.0, x_max=40.0, n_points=2048)


@pytest.fixture
def gaussian(constants):
    return gaussian_profile(constants, dq0=GROUND_DQ)


@pytest.fixture
def sech2(constants):
    return sech2_profile(constants, dq0=1.0)


@pytest.fixture
def harmonic():
    return HarmonicPotential(omega=1.0)


@pytest.fixture
def packet():
    """Unnormalized Gaussian amplitude with position spread sigma."""
    def build(x, q=0.0, sigma=GROUND_DQ, p=0.0, chirp=0.0):
        return np.exp(-(x - q) ** 2 / (4.0 * sigma ** 2) + 1j * (p * x + chirp * x ** 2))
    return build
