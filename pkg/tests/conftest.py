import numpy as np
import pytest

from nlmm.verify import random_stable_system


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def stable_system(rng):
    return random_stable_system(10, 2, 2, rng)


def scalar_system():
    from nlmm import LinearSystem
    return LinearSystem.from_matrices([[-1.0]], [[1.0]], [[1.0]])


def diag_system():
    from nlmm import LinearSystem
    return LinearSystem.from_matrices(np.diag([-1.0, -2.0]), [[1.0], [1.0]], [[1.0, 1.0]])
