"""
Pytest configuration.
"""

import tempfile

import numpy as np
import pytest
import torch

from worstenroll.audio import Waveform
from worstenroll.datagen import DatasetSpec, build_dataset
from worstenroll.model import ModelConfig, init_params


def tiny_dataset_spec(seed: int = 0) -> DatasetSpec:
    """Few short mixtures with N = 3 candidates; builds in about a second."""
    return DatasetSpec(
        n_train_speakers=3,
        n_dev_speakers=2,
        n_eval_speakers=2,
        n_train_mixtures=4,
        n_dev_mixtures=2,
        n_eval_mixtures=3,
        n_enrollments=3,
        utterances_per_speaker=5,
        utterance_duration_range_s=(0.1, 0.2),
        min_enrollment_duration_s=0.1,
        master_seed=seed,
    )


def tiny_model_config() -> ModelConfig:
    return ModelConfig(
        embedding_dim=4,
        encoder_channels=8,
        hidden_channels=8,
        n_blocks_embed=1,
        n_blocks_extract_per_repeat=1,
        n_repeats=2,
        kernel_size=3,
        frame_size=16,
        hop=8,
        n_train_speakers=3,
    )


@pytest.fixture
def temp_dir():
    """Temporary directory for testing."""
    with tempfile.TemporaryDirectory() as tmpdir:
        yield tmpdir


@pytest.fixture
def dataset_spec():
    """Tiny dataset settings."""
    return tiny_dataset_spec()


@pytest.fixture
def make_dataset_spec():
    """Factory for tiny dataset settings with a given master seed."""
    return tiny_dataset_spec


@pytest.fixture
def model_config():
    """Tiny model configuration."""
    return tiny_model_config()


@pytest.fixture
def tiny_model(model_config):
    """Seeded float32 model built from the tiny configuration."""
    return init_params(model_config, seed=0)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """Dataset generated once per session from the tiny settings."""
    root = tmp_path_factory.mktemp("dataset")
    return build_dataset(tiny_dataset_spec(), root, progress_mode="disabled", max_workers=2)


@pytest.fixture
def rng():
    """Seeded numpy generator."""
    return np.random.default_rng(1234)


@pytest.fixture
def signals(rng):
    """Target, mixture and three enrollments of 400 samples."""
    target = rng.standard_normal(400)
    mixture = target + 0.5 * rng.standard_normal(400)
    enrollments = [Waveform(rng.standard_normal(400)) for _ in range(3)]
    return Waveform(target), Waveform(mixture), enrollments


@pytest.fixture(autouse=True)
def _single_thread():
    """Keep torch deterministic and light in tests."""
    previous = torch.get_num_threads()
    torch.set_num_threads(1)
    yield
    torch.set_num_threads(previous)
