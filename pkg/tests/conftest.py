import numpy as np
import pytest

from splitmixer.tensor import Tape, Tensor4


@pytest.fixture
def tape():
    return Tape()


def leaf(tape, arr, dtype=None):
    arr = np.asarray(arr)
    if dtype is not None:
        arr = arr.astype(dtype)
    return tape.leaf(Tensor4(arr))


def param(tape, name, arr, dtype=np.float64):
    return tape.param(name, Tensor4(np.asarray(arr, dtype=dtype)))


def scalar(node):
    return float(node.data.reshape(()))
