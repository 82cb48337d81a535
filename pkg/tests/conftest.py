import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from headsim import OracleBackend, SimConfig


@pytest.fixture
def config():
    return SimConfig()


@pytest.fixture
def oracle(config):
    return OracleBackend(config.oracle)


def random_unit_quaternion(rng):
    from headsim import UnitQuaternion

    while True:
        v = rng.normal(size=4)
        n = np.linalg.norm(v)
        if n > 1e-3:
            return UnitQuaternion(*(v / n))
