import numpy as np
import pytest

from audiodiff.dsp import MelConfig
from audiodiff.model import Captioner, ModelConfig, Vocabulary
from audiodiff.scenegen import SceneConfig, generate_corpus

SMALL_MODEL = dict(d_model=32, n_heads=2, ff_dim=64, enc_layers=1, dec_layers=1)


@pytest.fixture(scope="session")
def vocab():
    return Vocabulary.from_grammar()


@pytest.fixture(scope="session")
def small_corpus():
    # in-memory corpus, waveforms synthesised on demand
    return generate_corpus(SceneConfig(n_train=24, n_valid=8, n_test=6, bank_per_type=5), seed=11)


@pytest.fixture(scope="session")
def mel_cfg():
    return MelConfig()


@pytest.fixture
def small_model(vocab):
    return Captioner(ModelConfig(**SMALL_MODEL), vocab)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
