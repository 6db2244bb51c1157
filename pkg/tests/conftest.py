import numpy as np
import pytest

from app.services.first_stage_service import ProxyModel, fixed_first_stage
from app.services.simulation_service import DgpSpec, generate


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow Monte Carlo tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def _noiseless(spec):
    """A design whose outcome is exactly the regression surface m0(x, V)."""
    data, oracle = generate(spec)
    y = oracle.m0(data.x, oracle.control_values[:, 0])
    data = data.with_outcome(y)
    fs = fixed_first_stage(data, ProxyModel(), oracle.beta)
    return data, fs, oracle


@pytest.fixture
def continuous_sample():
    return generate(DgpSpec(name="DGP-C", n=500, seed=11))


@pytest.fixture
def discrete_sample():
    return generate(DgpSpec(name="DGP-D", n=600, seed=12))


@pytest.fixture
def noiseless_continuous():
    return _noiseless(DgpSpec(name="DGP-C", n=600, seed=3, delta=0.0))


@pytest.fixture
def noiseless_discrete():
    return _noiseless(DgpSpec(name="DGP-D", n=800, seed=4))
