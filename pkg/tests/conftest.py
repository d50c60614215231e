import numpy as np
import pytest

from rdfkit import fixtures, robotsdf


@pytest.fixture(scope="session")
def planar_chain():
    return fixtures.planar_arm()


@pytest.fixture(scope="session")
def small_model(planar_chain):
    """Cheap N=6 fit for tests that need a field, not an accurate one."""
    sampling = robotsdf.SamplingConfig(n_samples=20_000, n_holdout=500)
    return robotsdf.fit_robot(planar_chain, n=6, sampling=sampling, seed=3)


@pytest.fixture(scope="session")
def planar_model8(planar_chain):
    return robotsdf.fit_robot(planar_chain, n=8, seed=0)


@pytest.fixture(scope="session")
def planar_model24(planar_chain):
    return robotsdf.fit_robot(planar_chain, n=24, seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    lines = getattr(__import__("sys").modules.get("test_acceptance"), "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
