import numpy as np
import pytest

from sdclr import EncoderSpec, synthetic_shapes
from sdclr.trainer import TrainConfig


TINY_ENCODER = EncoderSpec(image_size=16, channels=(6, 8, 10, 12),
                           proj_hidden=16, proj_dim=8)


def tiny_train_config(**kw):
    base = dict(epochs=2, batch_size=16, lr=0.2, tau=0.5, prune_ratio=0.5,
                seed=0, competitor="magnitude", dtype="float64")
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture(scope="session")
def tiny_source():
    """Small synthetic source shared across tests (10 classes, 16x16)."""
    return synthetic_shapes(n_classes=10, train_per_class=30, test_per_class=6,
                            image_size=16, seed=11)


@pytest.fixture(scope="session")
def shapes_source():
    """Mid-size 32x32 source for probe/eval tests."""
    return synthetic_shapes(n_classes=10, train_per_class=40, test_per_class=10,
                            image_size=32, seed=5)


def rand_images(n, size=16, seed=0):
    rng = np.random.default_rng(seed)
    return rng.random((n, size, size, 3)).astype(np.float32)
