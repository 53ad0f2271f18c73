import numpy as np
import pytest

from compensable import imgio
from compensable.photomodel import PhotometricModel, predict
from compensable.scene import DEFAULT_MIX


def smooth_field(rng, h, w, lo, hi, cells=4):
    return imgio.upsample_bilinear(rng.uniform(lo, hi, (cells, cells, 3)), h, w)


def random_model(rng, h=16, w=16, gamma=None, gain_lo=0.2):
    """A plausible fitted model: smooth gain, small bias, default crosstalk."""
    gain = smooth_field(rng, h, w, gain_lo, 1.0)
    bias = rng.uniform(0.0, 0.05, (h, w, 3))
    g = rng.uniform(1.6, 2.6) if gamma is None else gamma
    return PhotometricModel(gain, bias, DEFAULT_MIX, g)


def model_bounds(model):
    h, w, _ = model.shape
    return predict(model, np.ones((h, w, 3))), predict(model, np.zeros((h, w, 3)))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
