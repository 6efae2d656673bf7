import numpy as np
import pytest

from grouplatent.dataset import DemographicSchema, synth_toy_dataset


@pytest.fixture
def schema():
    return DemographicSchema((("gender", ("male", "female")), ("race", ("white", "hispanic"))))


@pytest.fixture
def toy(schema):
    ds, _ = synth_toy_dataset(schema, 50, 4, 12, 4.0, seed=3)
    return ds


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
