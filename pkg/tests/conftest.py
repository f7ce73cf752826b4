# conftest.py - Shared fixtures
import numpy as np
import pytest

from subdiff import wtfit
from subdiff.models import Grid1D, StateParams


@pytest.fixture
def set1() -> StateParams:
    return wtfit.published_state_params("set1")


@pytest.fixture
def set2() -> StateParams:
    return wtfit.published_state_params("set2")


@pytest.fixture
def two_state() -> StateParams:
    """mu = (1/2, 1/2), tau = (1, 2), sigma2 = 1."""
    return StateParams.build(alpha=0.5, K_alpha=1.0, tau_i=[1.0, 2.0], weights=[0.5, 0.5], tau=1.0)


@pytest.fixture
def single_state() -> StateParams:
    """One state with tau = 1 and sigma2 = 1; ordinary diffusion with D = 1."""
    return StateParams.build(alpha=1.0, K_alpha=1.0, tau_i=[1.0], weights=[1.0], tau=1.0)


@pytest.fixture
def unit_grid() -> Grid1D:
    return Grid1D(x_lo=0.0, x_hi=1.0, nx=16)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
