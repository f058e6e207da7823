import numpy as np
import pytest

from virtual_lidar import LidarModel, default_pandar64

#: (criterion, passed, detail) lines collected by the acceptance module
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in sorted(ACCEPTANCE_LINES, key=lambda x: x[0]):
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")


@pytest.fixture(scope="session")
def pandar():
    return default_pandar64()


@pytest.fixture(scope="session")
def small_model():
    """Coarse 8-beam sensor for fast tests."""
    return LidarModel(
        elevation_table=(-20.0, -12.0, -6.0, -3.0, 0.0, 3.0, 8.0, 13.0),
        azimuth_resolution=1.0,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
