import time

import numpy as np
import pytest

from impactloc.core import DEFAULT_PLATE, default_array, grid_locations
from impactloc.evaluation import ExperimentConfig, run_experiment, temperature_scenario
from impactloc.wavesim import GvpModel, simulate_dataset


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def iso_gvp():
    return GvpModel("isotropic", base_speed=5.0)


@pytest.fixture(scope="session")
def ref_dataset():
    g = GvpModel("elliptical", base_speed=400.0, anisotropy=0.1)
    return simulate_dataset(g, default_array(), DEFAULT_PLATE, grid_locations(), 1.0)


@pytest.fixture(scope="session")
def scenario():
    return temperature_scenario(seed=0)


class ExperimentCache:
    """Runs each experiment configuration once per test session."""

    def __init__(self, ref, tgt):
        self.ref, self.tgt = ref, tgt
        self._runs = {}
        self.elapsed = {}

    def run(self, subset="ri35", sensors=None, kernels=("rbf", "cos", "comp")):
        key = (subset, None if sensors is None else tuple(sensors), tuple(kernels))
        if key not in self._runs:
            cfg = ExperimentConfig(reference_subset=subset, sensor_subset=sensors,
                                   kernels=tuple(kernels), seed=0)
            t0 = time.perf_counter()
            self._runs[key] = run_experiment(cfg, self.ref, self.tgt)
            self.elapsed[key] = time.perf_counter() - t0
        return self._runs[key]

    def seconds(self, subset="ri35", sensors=None, kernels=("rbf", "cos", "comp")):
        self.run(subset, sensors, kernels)
        return self.elapsed[(subset, None if sensors is None else tuple(sensors), tuple(kernels))]


@pytest.fixture(scope="session")
def experiments(scenario):
    return ExperimentCache(*scenario)


_ACCEPTANCE = {}


@pytest.fixture(scope="session")
def acceptance_log():
    """Collects one verdict line per acceptance criterion for the terminal summary."""
    return _ACCEPTANCE


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[n])
