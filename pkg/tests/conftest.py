import numpy as np
import pytest

from urllc_alloc.scenario import Scenario, Sensor, SystemParams, User, generate_scenario, path_loss


def small_scenario(distances_ul=(60.0, 90.0), distances_dl=(80.0,), lam=0.02, **params):
    """Hand-placed cell with a few devices; keyword arguments override SystemParams."""
    p = SystemParams(**params)
    sensors = [Sensor(i, path_loss(d, p), d) for i, d in enumerate(distances_ul)]
    users = [User(k, path_loss(d, p), d, lam, max(1, round(lam / p.kappa))) for k, d in enumerate(distances_dl)]
    return Scenario(sensors, users, p)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def cell_50_10():
    return generate_scenario(50, 10, seed=1)


# one line per acceptance criterion, printed after the run
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
