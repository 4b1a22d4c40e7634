import numpy as np
import pytest

from histomix.toydata import make_toy_dataset


@pytest.fixture(scope="session")
def toy_manifest(tmp_path_factory):
    root = tmp_path_factory.mktemp("toy_dataset")
    return make_toy_dataset(root, per_class=10, seed=3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_image(rng, h, w):
    return rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8)


def constant_pair(value, label, h=224, w=224):
    img = np.full((h, w, 3), value, dtype=np.uint8)
    mask = np.full((h, w), label, dtype=np.uint8)
    return img, mask
