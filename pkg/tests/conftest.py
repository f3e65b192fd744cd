import numpy as np
import pytest

from anasod.encoding import CellSpec, nb201_dag
from anasod.oracle import SyntheticOracle, SyntheticOracleParams, calibrate_synthetic

NB201_OPS = ("conv3x3", "conv1x1", "skip", "avgpool", "zeroize")

# landscape used wherever a calibrated oracle is needed (see the acceptance module)
CALIBRATION_SEED = 10
CIFAR10_TARGETS = (9.5, 1.2, 0.19)


@pytest.fixture(scope="session")
def nb201_spec():
    return CellSpec(6, 5, NB201_OPS, nb201_dag())


@pytest.fixture(scope="session")
def calibrated_params(nb201_spec):
    return calibrate_synthetic(nb201_spec, *CIFAR10_TARGETS, np.random.default_rng(CALIBRATION_SEED))


@pytest.fixture(scope="session")
def calibrated_oracle(nb201_spec, calibrated_params):
    return SyntheticOracle(nb201_spec, calibrated_params)


def quadratic_params(k, seed=0, sigma_wiring=0.0, sigma_seed=0.0):
    """A convex quadratic landscape with optional noise, built by hand."""
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(k, k))
    return SyntheticOracleParams(
        op_weights=tuple(10 * rng.normal(size=k)),
        pairwise=tuple(map(tuple, 10 * A @ A.T / k)),
        base_err=30.0,
        sigma_wiring=sigma_wiring,
        sigma_seed=sigma_seed,
    )


@pytest.fixture(scope="session")
def zero_noise_oracle(nb201_spec):
    return SyntheticOracle(nb201_spec, quadratic_params(nb201_spec.k))


# one line per acceptance criterion, printed after the run
ACCEPTANCE_RESULTS: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(ACCEPTANCE_RESULTS[n])
