import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def unique_valued(rng, shape):
    """Random tensor whose entries are pairwise distinct (no pooling ties)."""
    n = int(np.prod(shape))
    vals = rng.permutation(n).astype(np.float32) / n + rng.standard_normal() * 0.0
    return vals.reshape(shape)
