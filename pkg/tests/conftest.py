import os

import numpy as np
import pytest
from hypothesis import settings

from app.models.vocab import VocabLayout
from app.services.pipeline import build_model, fit_tokenizer
from app.simulation.dataset import collect_episodes
from app.utils.config import load_config

settings.register_profile("ci", max_examples=100, deadline=None)
settings.register_profile("dev", max_examples=25, deadline=None)
settings.load_profile(os.getenv("HYPOTHESIS_PROFILE", "dev"))


@pytest.fixture
def layout() -> VocabLayout:
    return VocabLayout(base_vocab_size=512, action_vocab_size=32)


@pytest.fixture
def small_layout() -> VocabLayout:
    """V=16, V_a=4: action tokens 16..19, mask 20."""
    return VocabLayout(base_vocab_size=16, action_vocab_size=4)


@pytest.fixture
def micro_config():
    return load_config(profile="micro")


@pytest.fixture(scope="session")
def expert_episodes():
    episodes, failed = collect_episodes(12, seed=0, progress=False)
    assert failed == 0
    return episodes


@pytest.fixture
def micro_model(micro_config, expert_episodes):
    return build_model(micro_config, fit_tokenizer(micro_config, expert_episodes))


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
