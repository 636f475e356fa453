import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from passivecbf.robot_model import load_model_file
from passivecbf.task_space import TaskMapConfig

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def pendulum():
    return load_model_file("pendulum")


@pytest.fixture(scope="session")
def planar():
    return load_model_file("planar2")


@pytest.fixture(scope="session")
def arm7():
    return load_model_file("arm7")


@pytest.fixture(scope="session")
def planar_task():
    return TaskMapConfig("planar2")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
