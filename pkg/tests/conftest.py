import numpy as np
import pytest

from auvkit.volumes import ClassFeatureMatrix


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def centered_matrix(rng, rows, cols):
    """Random matrix with row means removed, as a ClassFeatureMatrix."""
    data = rng.standard_normal((rows, cols))
    data = data - data.mean(axis=1, keepdims=True)
    return ClassFeatureMatrix(class_id=0, data=data, centered=True)


def raw_matrix(rng, rows, cols):
    return ClassFeatureMatrix(class_id=0, data=rng.standard_normal((rows, cols)), centered=False)
