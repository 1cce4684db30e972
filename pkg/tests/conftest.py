import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from relkd.autodiff import Tensor
from relkd.encoders import EmbeddingBatch


def random_unit_rows(rng, b, d):
    m = rng.standard_normal((b, d))
    return m / np.linalg.norm(m, axis=1, keepdims=True)


def random_batches(seed, b=4, d=8):
    """Four random normalized embedding batches (v_t, s_t, v_s, s_s)."""
    rng = np.random.default_rng(seed)
    return (EmbeddingBatch(Tensor(random_unit_rows(rng, b, d)), "teacher", "image"),
            EmbeddingBatch(Tensor(random_unit_rows(rng, b, d)), "teacher", "text"),
            EmbeddingBatch(Tensor(random_unit_rows(rng, b, d)), "student", "image"),
            EmbeddingBatch(Tensor(random_unit_rows(rng, b, d)), "student", "text"))


@pytest.fixture
def rng():
    return np.random.default_rng(0)
