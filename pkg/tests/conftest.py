import numpy as np
import pytest

from rwkvp import autograd as ag
from rwkvp import corpus as corpus_mod
from rwkvp import model as m
from rwkvp import synth, training


@pytest.fixture(autouse=True)
def _restore_default_dtype():
    yield
    ag.set_default_dtype(np.float32)


def tiny_config(**kw):
    base = dict(n_layers=2, d_model=16, vocab_size=17, n_perspectives=1,
                context_length=16)
    base.update(kw)
    return m.ModelConfig(**base)


@pytest.fixture(scope="session")
def synth_tokens():
    data = synth.generate_corpus(0, 3000)
    return np.frombuffer(data, dtype=np.uint8).astype(np.int64)


@pytest.fixture(scope="session")
def synth_split(synth_tokens):
    return corpus_mod.train_val_split(synth_tokens)


@pytest.fixture(scope="session")
def base_config():
    return m.ModelConfig(n_layers=2, d_model=48, vocab_size=257,
                         n_perspectives=1, context_length=64)


@pytest.fixture(scope="session")
def pretrained_base(base_config, synth_split):
    """A lightly pretrained tiny base, shared by training/eval/acceptance tests."""
    train_tokens, val_tokens = synth_split
    tc = training.TrainConfig(batch_size=2, lr_max=1e-3, lr_min=2e-4,
                              mini_epochs=2, contexts_per_mini_epoch=200,
                              context_length=base_config.context_length, seed=0)
    store, mask, log = training.pretrain_base(base_config, train_tokens,
                                              val_tokens, tc)
    return store, mask, log
