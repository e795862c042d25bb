import math

import numpy as np
import pytest

from snapdistill.data import synth_mixture


def py_softmax(z, T=1.0):
    """Plain-python softmax, the oracle for the vectorized paths."""
    m = max(z)
    e = [math.exp((v - m) / T) for v in z]
    s = sum(e)
    return [v / s for v in e]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_flat():
    kw = dict(num_classes=4, dim=6, separation=5.0, seed=3)
    return synth_mixture(per_class=20, **kw), synth_mixture(per_class=10, split="test", **kw)


@pytest.fixture(scope="session")
def tiny_images():
    kw = dict(num_classes=4, dim=3 * 8 * 8, separation=8.0, seed=5, image_shape=(3, 8, 8))
    return synth_mixture(per_class=6, **kw), synth_mixture(per_class=3, split="test", **kw)
