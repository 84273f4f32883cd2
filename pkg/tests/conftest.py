import numpy as np
import pytest

from drive_sysid.machine import DriveParameters, OperatingConditions
from drive_sysid.models import exact_predictor, first_order_predictor
from drive_sysid.plant import PlantConfig, default_setpoints, generate_dataset

OMEGA = 2 * np.pi * 1000 / 60 * 3


@pytest.fixture(scope="session")
def params():
    return DriveParameters()


@pytest.fixture(scope="session")
def cond():
    return OperatingConditions()


@pytest.fixture(scope="session")
def exact(params, cond):
    return exact_predictor(params, cond)


@pytest.fixture(scope="session")
def first_order(params, cond):
    return first_order_predictor(params, cond)


@pytest.fixture(scope="session")
def linear_clean():
    """Noiseless linear-plant data, every vector drawn at random (about 2.9k per subset)."""
    cfg = PlantConfig(flux="linear", noise_sigma=0.0, seed=11)
    return generate_dataset(cfg, default_setpoints(), 42, random_vector_prob=1.0, guard=False)


@pytest.fixture(scope="session")
def saturated_split():
    """(train, test) from the default noisy saturated plant."""
    ds = generate_dataset(PlantConfig(seed=5), default_setpoints(), 63, random_vector_prob=0.3)
    return ds.take(np.arange(20000)), ds.take(np.arange(20000, 30000))
