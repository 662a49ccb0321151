"""
Pytest configuration and fixtures
"""

import numpy as np
import pytest

from discodiff.config import RunConfig, settings
from discodiff.services.datagen import MixtureSpec, default_mixture, sample_dataset
from discodiff.services.diffusion import DiffusionConfig, ToyDenoiser
from discodiff.services.disco import DiscoModel, Encoder


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run full training acceptance tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: full training runs, skipped unless --runslow is given")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(autouse=True)
def quiet_progress(monkeypatch):
    """No tqdm bars in test output"""
    monkeypatch.setattr(settings, "progress", False)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def mixture():
    return default_mixture()


@pytest.fixture
def single_gaussian():
    return MixtureSpec(means=np.array([[3.0, 0.0]]), sigma=0.2)


@pytest.fixture
def small_dataset(mixture):
    return sample_dataset(mixture, 20, seed=0)


@pytest.fixture
def diffusion():
    return DiffusionConfig(sigma_data=2.0)


@pytest.fixture
def toy_denoiser(rng):
    """m=1, k=8 denoiser with a small residual MLP"""
    return ToyDenoiser(1, 8, rng, sigma_component=0.2, hidden_width=8, depth=3,
                       time_embedding_dim=4)


@pytest.fixture
def disco_model(rng):
    denoiser = ToyDenoiser(1, 4, rng, sigma_component=0.2, hidden_width=8, depth=3,
                           time_embedding_dim=4)
    encoder = Encoder(1, 4, rng, hidden_width=8, depth=3, input_scale=0.5)
    return DiscoModel(denoiser, encoder)


@pytest.fixture
def tiny_config():
    """A pipeline small enough to run end to end in seconds"""
    return RunConfig.load(
        n_per_component=8,
        hidden_width=8,
        denoiser_depth=2,
        encoder_width=8,
        encoder_depth=2,
        time_embedding_dim=4,
        codebook_size=4,
        train_steps=6,
        batch_size=16,
        prior_epochs=2,
        n_steps=4,
        n_samples=12,
        n_trajectories=3,
        jacobian_probes=4,
        loss_bins=3,
        loss_probes_per_bin=8,
    )
