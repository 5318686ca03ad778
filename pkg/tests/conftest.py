import random

import pytest

from specagent.config import RunConfig
from specagent.environment import default_registry


@pytest.fixture(scope="session")
def registry_uniform():
    config = RunConfig()
    return default_registry().with_latency(config.latency_model())


@pytest.fixture()
def rng():
    return random.Random(12345)
