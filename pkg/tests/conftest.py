import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from onlinenmf import kernels
from onlinenmf.params import ThetaParams
from onlinenmf.processes import BasisSelectionParams, BasisSelectionProcess

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(params=["numpy", "numba"])
def backend(request):
    """Run the test once per kernel backend."""
    if request.param == "numba" and not kernels.JIT_ENABLED:
        pytest.skip("numba backend disabled")
    old = kernels.backend()
    kernels.set_backend(request.param)
    yield request.param
    kernels.set_backend(old)


def random_instance(rng, K, M, T, p=None, q=None, scale=3.0):
    """A small basis-selection problem: process, parameters and simulated counts."""
    from onlinenmf.simulate import simulate

    proc = BasisSelectionProcess(K)
    psi = BasisSelectionParams(p if p is not None else rng.uniform(0.2, 0.9),
                               q if q is not None else rng.uniform(0.2, 0.9))
    theta = ThetaParams(rng.uniform(0.2, scale, size=(M, K)), psi)
    _, Y = simulate(proc, theta, T, rng)
    return proc, theta, Y.astype(np.float64)


#: one line per acceptance criterion, filled in by test_acceptance
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
