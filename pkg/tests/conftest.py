import numpy as np
import pytest

from timestate import default_simulation_params, fit_model, simulate_dataset

_ACCEPTANCE = []


def record_criterion(number, title, passed, detail):
    """Remember an acceptance outcome for the end-of-run summary."""
    line = f"criterion {number:>2} [{'PASS' if passed else 'FAIL'}] {title}: {detail}"
    _ACCEPTANCE.append((number, line))
    print(line)
    return passed


@pytest.fixture
def criterion():
    return record_criterion


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_ACCEPTANCE):
        terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def sim_params():
    return default_simulation_params()


@pytest.fixture(scope="session")
def small_sim(sim_params):
    return simulate_dataset(sim_params, 400, (4, 4, 4, 4), seed=11)


@pytest.fixture(scope="session")
def small_fit(small_sim):
    ds, _ = small_sim
    return fit_model(ds, "first")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
