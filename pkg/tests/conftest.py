import numpy as np
import pytest

from itube.interp import design_bracket
from itube.params import ControlParams, cost_weights
from itube.vehicle import VehicleParams, build_model

# Lines recorded by the acceptance suite, echoed in the terminal summary.
ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def model():
    return build_model(VehicleParams())


@pytest.fixture(scope="session")
def ctrl():
    return ControlParams()


@pytest.fixture(scope="session")
def weights(model, ctrl):
    return cost_weights(model, ctrl)


@pytest.fixture(scope="session")
def det_bounds():
    # tightened bounds near kappa = 0.08 at 20 m/s
    return (3.6, 2.04, 0.423)


@pytest.fixture(scope="session")
def bracket(det_bounds, ctrl):
    return design_bracket(det_bounds, ctrl.constraints.rate_bounds)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
