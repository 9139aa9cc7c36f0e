import numpy as np
import pytest

from extraflow.flow import Grid, seeded_rng
from extraflow.oracle import MixtureSpec


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def noise_grid():
    def make(channels=3, height=16, width=16, seed=0):
        return Grid.noise((channels, height, width), seeded_rng(seed, 99))
    return make


@pytest.fixture(scope="session")
def testbed():
    return MixtureSpec.testbed()


@pytest.fixture
def lab_config(tmp_path):
    return {
        "OUTPUT_DIR": str(tmp_path / "runs"),
        "RENDER_WINDOW_MIN": -3.0,
        "RENDER_WINDOW_MAX": 3.0,
        "LOG_DIR": str(tmp_path / ".logs"),
        "ENABLE_FILE_LOG": False,
        "LOG_LEVEL": "INFO",
        "WORKERS": 2,
        "ATTENTION_CHUNK": 64,
    }
