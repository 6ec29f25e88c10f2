import math
import os
import sys

# Add the project root to sys.path
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

import numpy as np
import pytest

from core.grid import Box, make_uniform_grid
from core.kernels import SeminormParams, bump_kernel, hilbert_kernel, zero_kernel
from core.operator import OperatorSpec



@pytest.fixture
def hilbert():
    return hilbert_kernel()


@pytest.fixture
def hilbert_spec(hilbert):
    return OperatorSpec(hilbert, 2.0, math.pi)


@pytest.fixture
def zero_spec():
    return OperatorSpec(zero_kernel(1), 2.0, 1.0)


@pytest.fixture
def bump_linf_spec():
    return OperatorSpec(bump_kernel(1), math.inf, 2.0)


@pytest.fixture
def fast_params():
    """One radius, coarse enough for the test suite, fine enough for 1e-2 agreement."""
    return SeminormParams(r_set=[1.0], y_spacing=1e-3, rho=1e3, outer_spacing=1e-2)


@pytest.fixture
def coarse_params():
    return SeminormParams(r_set=[1.0], y_spacing=1e-2, rho=1e3, outer_spacing=1e-2)


@pytest.fixture
def coarse_2d_params():
    return SeminormParams(r_set=[1.0], y_spacing=0.1, rho=64, outer_spacing=0.05)


@pytest.fixture
def unit_grid():
    """[0, 1) with 16 cells."""
    return make_uniform_grid(Box((0.0,), (1.0,)), 2.0**-4)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
