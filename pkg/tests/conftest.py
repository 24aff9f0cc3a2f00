import math

import numpy as np
import pytest
import torch

from sslmatch.backbones import Backbone
from sslmatch.data import LabeledExample, UnlabeledExample
from sslmatch.synth import build_splits


def make_linear(num_classes=2, input_side=1, weights=None, dtype=torch.float64):
    """Linear backbone with zeroed params; `weights` fills the first head row
    entries so logits are exactly known."""
    model = Backbone("linear", num_classes=num_classes, in_channels=1,
                     input_side=input_side, seed=0, dtype=dtype)
    pv = model.param_vector()
    pv.values[:] = 0.0
    if weights is not None:
        seg = pv.segment("head.weight")
        for i, w in enumerate(weights):
            seg[i] = w
    model.load_param_vector(pv)
    return model


def image(*pixels, side=None):
    """(1, 1, n) image from pixel values, or (1, side, side) when side given."""
    arr = np.asarray(pixels, dtype=np.float32)
    if side is not None:
        return arr.reshape(1, side, side)
    return arr.reshape(1, 1, len(pixels))


def identity_fn(img, rng):
    return img


LN_1_5 = math.log(1.5)
LN_8_3 = math.log(8.0 / 3.0)


@pytest.fixture(scope="session")
def micro_splits():
    """Small synthetic dataset reused by protocol-level tests."""
    return build_splits(num_classes=4, side=32, seed=0,
                        counts={"train": 24, "val": 8, "test": 8})


@pytest.fixture
def flat_labeled():
    return [LabeledExample(image=image(float(i % 2)), label=i % 2) for i in range(8)]


@pytest.fixture
def flat_unlabeled():
    return [UnlabeledExample(image=image(float(i % 2)), source_index=i) for i in range(8)]
