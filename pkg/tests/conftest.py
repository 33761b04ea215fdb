import numpy as np
import pytest

from kspace.dumpstore import LABEL_IMAGE, LABEL_OTHER, LABEL_TEXT, make_layer_dump
from kspace.rng import make_rng


@pytest.fixture
def random_dump():
    """Factory for valid dumps mixing all three label codes."""

    def make(seed: int, count: int = 100, dim: int = 8, layer_index: int = 0):
        gen = make_rng(seed)
        data = gen.normal(size=(count, dim)).astype(np.float32)
        labels = gen.choice(
            [LABEL_TEXT, LABEL_IMAGE, LABEL_OTHER], size=count, p=[0.45, 0.45, 0.1]
        ).astype(np.uint8)
        sample_ids = gen.integers(0, max(1, count // 4), size=count).astype("<u4")
        return make_layer_dump(layer_index, data, labels, sample_ids)

    return make
