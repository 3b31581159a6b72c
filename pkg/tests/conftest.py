import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from dmrlab.hilbert import DensityMatrix, LatticeSpace, PureState

settings.register_profile("dmrlab", max_examples=25, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("dmrlab")


def random_state(space, rng):
    z = rng.standard_normal(space.dim) + 1j * rng.standard_normal(space.dim)
    return PureState.from_values(z, space)


def random_density(space, rng, rank=3):
    z = rng.standard_normal((space.dim, rank)) + 1j * rng.standard_normal((space.dim, rank))
    return DensityMatrix.from_matrix(z @ z.conj().T, space, renormalize=True)


def random_hermitian(d, rng):
    g = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
    return 0.5 * (g + g.conj().T)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def ring():
    return LatticeSpace(1, 16, 0.5)


@pytest.fixture
def pair():
    return LatticeSpace(2, 6, 0.7, masses=(1.0, 2.0))
