import numpy as np
import pytest

from aggrnet.engine import Tensor, set_default_dtype


@pytest.fixture(autouse=True)
def _reset_dtype():
    set_default_dtype(np.float32)
    yield
    set_default_dtype(np.float32)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def t64(array, grad=True):
    return Tensor(np.asarray(array, dtype=np.float64), requires_grad=grad, dtype=np.float64)
