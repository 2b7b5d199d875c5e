import numpy as np
import pytest

from dtrans.codeprep import RESERVED, TokenizedExample, Vocabulary
from dtrans.data import make_batch
from dtrans.model import ModelConfig, Transformer

TINY_TOKENS = ["int", "VAR_1", "VAR_2", "=", ";", "(", ")", "METHOD_1"]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_vocab():
    return Vocabulary(list(RESERVED) + TINY_TOKENS)


@pytest.fixture
def tiny_examples():
    return [
        TokenizedExample("int VAR_1 = METHOD_1 ( VAR_2 ) ;".split(), "int VAR_2 = METHOD_1 ( VAR_1 ) ;".split()),
        TokenizedExample("VAR_1 = VAR_2 ; VAR_2 = VAR_1 ;".split(), "VAR_2 = VAR_1 ;".split()),
        TokenizedExample("METHOD_1 ( ) ;".split(), "METHOD_1 ( VAR_1 ) ; int VAR_2 ;".split()),
    ]


@pytest.fixture
def tiny_batch(tiny_examples, tiny_vocab):
    return make_batch(tiny_examples, tiny_vocab)


def tiny_model(mode, vocab_size=12, seed=0, jitter=0.0, layers=1, **kw):
    cfg = ModelConfig(mode=mode, layers=layers, heads=2, d_model=8, d_ff=16, k=2,
                      vocab_size=vocab_size, dropout=0.0, max_len=64, **kw)
    model = Transformer(cfg, seed=seed)
    if jitter:
        r = np.random.default_rng(seed + 99)
        for p in model.parameters():
            p.data += r.uniform(-jitter, jitter, p.shape)
    return model


def copy_params(src, dst):
    """Copy every parameter that exists in both models."""
    for name, p in dst.params.items():
        if name in src.params:
            p.data[...] = src.params[name].data


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
