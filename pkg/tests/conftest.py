import numpy as np
import pytest
import torch

import tripletdet as td

torch.set_num_threads(4)


@pytest.fixture(scope="session")
def vocab():
    return td.toy_vocabulary()


@pytest.fixture(scope="session")
def small_dataset():
    """60 frames over 3 videos; enough structure for data-level tests."""
    return td.generate_synthetic_dataset(td.SynthSpec(frames=60, videos=3), seed=11)


@pytest.fixture()
def tiny_cfg():
    """Smallest config the stride-16 backbone accepts; grid is 2x3."""
    return td.ModelConfig(image_height=32, image_width=48, d=16, b_l=1, t_l=1,
                          heads=2, backbone="toy", d_prime=8, mp_layers=2,
                          mp_heads=2)


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
