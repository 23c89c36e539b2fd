import numpy as np
import pytest
import torch
from hypothesis import HealthCheck, settings

from crsr import toydata
from crsr.imaging import ImageBatch, ImageRole

settings.register_profile(
    "ci",
    deadline=None,
    max_examples=25,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("ci")


def random_batch(size: int, n: int = 4, seed: int = 0, amplitude: float = 1.0) -> ImageBatch:
    rng = np.random.default_rng(seed)
    data = rng.uniform(-amplitude, amplitude, (n, 3, size, size)).astype(np.float32)
    role = ImageRole.GENUINE_LR if size == 16 else ImageRole.AUX_HR
    return ImageBatch(torch.from_numpy(data), role)


@pytest.fixture(scope="session")
def toy_faces():
    return toydata.make_toy_faces(4, 8, seed=0)


@pytest.fixture(scope="session")
def toy_holdout():
    return toydata.make_toy_faces(4, 2, seed=1234)
