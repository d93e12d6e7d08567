import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from dssje.synthetic import generate_synthetic  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_ds():
    return generate_synthetic(n_classes=8, n_train_classes=5, images_per_class=4, captions_per_image=3,
                              n_attributes=5, feature_dim=16, noise_sigma=0.2, seed=0)
