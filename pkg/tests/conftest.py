# Test configuration for pytest
import os

import pytest

# Set test environment variables before any settings are loaded
os.environ["IDFF_LOG"] = "error"
os.environ.pop("IDFF_LOG_DIR", None)

from src.core.rng import make_rng  # noqa: E402
from src.data.datasets import gen_toy2d  # noqa: E402
from src.data.models import ExperimentBudget, ModelConfig, PathConfig, TrainConfig  # noqa: E402
from src.flow.network import IDFFNet  # noqa: E402
from src.utils.logging import setup_logging  # noqa: E402

setup_logging("ERROR")


@pytest.fixture
def rng():
    """Seeded generator, fresh for every test."""
    return make_rng(1234)


@pytest.fixture
def path_config():
    return PathConfig()


@pytest.fixture
def small_model_config():
    """Two-dimensional model small enough for finite-difference checks."""
    return ModelConfig(data_dim=2, hidden_dim=8, depth=1, K=2, time_embed_dim=4)


@pytest.fixture
def small_model(small_model_config):
    return IDFFNet(small_model_config, seed=3)


@pytest.fixture
def perturbed_model(small_model):
    """Model whose heads are no longer zero, so every output depends on the inputs."""
    model = small_model.copy()
    gen = make_rng(99)
    for name, tensor in model.params.items():
        if name.startswith("head"):
            tensor.data = 0.3 * gen.standard_normal(tensor.shape)
    return model


@pytest.fixture
def tiny_train_config():
    return TrainConfig(batch_size=32, iters=20, hidden_dim=16, depth=1, time_embed_dim=4, K=2, seed=0, log_every=10)


@pytest.fixture
def tiny_budget():
    """Experiment budget that trains in well under a second per arm."""
    return ExperimentBudget(iters=5, batch_size=16, hidden_dim=8, depth=1, n_train=128, n_eval=64)


@pytest.fixture
def toy_rows():
    return gen_toy2d("eight_gaussians", 256, make_rng(7)).rows
