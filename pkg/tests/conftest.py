import numpy as np
import pytest

from ctikg import fixtures, tokenizer
from ctikg.extraction import load_gazetteer
from ctikg.lm import LmConfig, TrainState, init_params


@pytest.fixture(scope="session")
def small_docs():
    return fixtures.build_fixture_corpus(n_docs=12, seed=2, sentences_per_doc=(4, 6))


@pytest.fixture(scope="session")
def small_vocab(small_docs):
    return tokenizer.train_bpe([d.body for d in small_docs], 300)


@pytest.fixture(scope="session")
def tiny_config(small_vocab):
    return LmConfig(vocab_size=small_vocab.size, context_length=64,
                    n_layers=2, d_model=32, n_heads=2, dropout=0.0, seed=1)


@pytest.fixture
def tiny_params(tiny_config):
    return init_params(tiny_config)


@pytest.fixture
def tiny_state(tiny_params):
    return TrainState.new(tiny_params)


@pytest.fixture(scope="session")
def gazetteer():
    return load_gazetteer()


@pytest.fixture
def rng():
    return np.random.default_rng(0)
