import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from kron_dyson import ensemble, mde

settings.register_profile(
    "suite",
    max_examples=25,
    deadline=None,
    derandomize=True,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("suite")


@pytest.fixture(scope="session")
def semicircle():
    return ensemble.preset("semicircle")


@pytest.fixture(scope="session")
def real_semicircle():
    return ensemble.preset("real_semicircle")


@pytest.fixture(scope="session")
def free_diag():
    return ensemble.preset("free_diag")


@pytest.fixture(scope="session")
def block_wigner2():
    return ensemble.preset("block_wigner2")


@pytest.fixture(scope="session")
def pencil4():
    return ensemble.preset("pencil4")


@pytest.fixture(scope="session")
def pencil4_bulk(pencil4):
    # boundary solution at a bulk energy, shared across stability tests
    return mde.bulk_point(pencil4, 1.0)


@pytest.fixture(scope="session")
def bw2_bulk(block_wigner2):
    return mde.bulk_point(block_wigner2, 0.3)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
