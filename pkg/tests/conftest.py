import numpy as np
import pytest

from mnmt_adapters.model import ModelConfig, TransformerModel
from mnmt_adapters.synthetic import interference_task
from mnmt_adapters.text import Vocabulary, learn_bpe


def tiny_config(vocab_size, **kw):
    base = dict(enc_layers=2, dec_layers=2, d_model=8, d_ffn=16, heads=2, vocab_size=vocab_size,
                max_len=32, dropout=0.0, label_smoothing=0.0)
    base.update(kw)
    return ModelConfig(**base)


def randomize(bank, seed=0, scale=0.3):
    """Give every adapter tensor random values so the bank is no longer an identity."""
    rng = np.random.default_rng(seed)
    for p in bank.parameters().values():
        p.data = (rng.normal(0.0, scale, size=p.shape)).astype(p.data.dtype)
    return bank


@pytest.fixture(scope="session")
def toy_text():
    train, dev = interference_task(n_train=60, n_dev=12, seed=3)
    bpe = learn_bpe(train, 90)
    vocab = Vocabulary.build(bpe, ["en"])
    return train, dev, bpe, vocab


@pytest.fixture()
def toy_model(toy_text):
    vocab = toy_text[3]
    return TransformerModel(tiny_config(len(vocab)), seed=1, dtype=np.float64)


# ---------------------------------------------------------------- acceptance summary

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
