import numpy as np
import pytest

from gradpipe import layers as L
from gradpipe.data import synth_blobs
from gradpipe.tensor import RandomSource


def small_classifier_specs(in_dim=10, hidden=16, classes=4):
    return [
        L.Affine(in_dim, hidden),
        L.Relu(),
        L.Affine(hidden, hidden),
        L.Tanh(),
        L.Affine(hidden, classes),
        L.SoftmaxCrossEntropyHead(classes),
    ]


def states_equal(a: list[L.LayerState], b: list[L.LayerState]) -> bool:
    if len(a) != len(b):
        return False
    for sa, sb in zip(a, b):
        for name in ("weights", "bias"):
            xa, xb = getattr(sa, name), getattr(sb, name)
            if (xa is None) != (xb is None):
                return False
            if xa is not None and not np.array_equal(xa, xb):
                return False
    return True


def max_state_diff(a: list[L.LayerState], b: list[L.LayerState]) -> float:
    worst = 0.0
    for sa, sb in zip(a, b):
        for name in ("weights", "bias"):
            xa, xb = getattr(sa, name), getattr(sb, name)
            if xa is not None:
                worst = max(worst, float(np.max(np.abs(xa - xb))))
    return worst


@pytest.fixture
def rng():
    return RandomSource(12345)


@pytest.fixture
def blob_dataset():
    return synth_blobs(classes=4, dim=10, sep=2.5, seed=99, n=300)
