import numpy as np
import pytest

from rcbproto.embedder import ModelConfig, init_params

# The grad-check configuration used throughout: H=8, I=2, hidden=3, stem=2, L=2, M=4.
TINY = ModelConfig(H=8, I=2, blstm_hidden=3, stem_channels=2, L=2, M=4)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config():
    return TINY


@pytest.fixture
def tiny_params():
    return init_params(TINY, seed=3)
