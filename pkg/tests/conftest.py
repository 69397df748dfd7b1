import os

import pytest
from hypothesis import HealthCheck, settings

from avbench.synth import SynthCorpusSpec, generate_synthetic_corpus
from avbench.tokenizer import train_vocab

settings.register_profile(
    "default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.register_profile("thorough", deadline=None, max_examples=300)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def small_corpus():
    return generate_synthetic_corpus(SynthCorpusSpec(n_samples=40, tokens_per_sample=(2, 5), seed=5))


@pytest.fixture(scope="session")
def vocab():
    corpus = generate_synthetic_corpus(SynthCorpusSpec(n_samples=400, seed=11))
    return train_vocab(corpus, 128)
