import numpy as np
import pytest

from crowdspeed import CalibrationTable, preset_scenario


@pytest.fixture(scope="session")
def outdoor():
    return preset_scenario("outdoor")


@pytest.fixture(scope="session")
def indoor():
    return preset_scenario("indoor")


@pytest.fixture(scope="session")
def calib():
    return CalibrationTable(
        baseline=(-40.0, -41.0),
        levels={1: (-55.0, -56.5), 2: (-62.0, -63.0)},
    )


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(987)
