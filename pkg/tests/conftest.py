import numpy as np
import pytest
import torch

from emosynth.acoustic import ModelConfig
from emosynth.corpus import SyntheticConfig, generate_synthetic_corpus

# fixed thread count keeps repeated runs bit-identical
torch.set_num_threads(1)


@pytest.fixture(scope="session")
def tiny_config() -> SyntheticConfig:
    """Four categories and short utterances: fast to generate and train on."""
    return SyntheticConfig(
        category_names=("neutral", "happiness", "anger", "sadness"),
        base_f0=(0.0, 1.0, 0.8, 0.35),
        base_energy=(0.0, 0.8, 1.0, 0.3),
        syllable_range=(3, 6),
        phonemes_per_syllable=(1, 2),
    )


@pytest.fixture(scope="session")
def tiny_corpus(tiny_config):
    return generate_synthetic_corpus(seed=11, n_per_emotion=6, config=tiny_config)


@pytest.fixture
def small_model_config() -> ModelConfig:
    return ModelConfig(
        vocab_size=40,
        mel_bins=20,
        n_categories=4,
        d_enc=32,
        d_dec=64,
        d_g=8,
        d_u=8,
        d_l=8,
        prenet_dim=16,
        cond_channels=16,
        dropout=0.1,
        max_decode_steps=60,
    )


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
