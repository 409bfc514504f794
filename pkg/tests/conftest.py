"""Pytest configuration and fixtures."""

import tempfile
from pathlib import Path

import pytest

from pbd.config import ModelConfig
from pbd.data.corpus import Example, write_tsv
from pbd.data.vocab import build_vocab
from pbd.model import init_model


@pytest.fixture
def temp_dir():
    """Create a temporary directory for tests."""
    with tempfile.TemporaryDirectory() as tmpdir:
        yield Path(tmpdir)


@pytest.fixture
def make_config():
    """Factory for small model configs; keyword overrides replace defaults."""
    def _make(**overrides):
        values = dict(
            vocab_size=9, d_model=8, n_heads=2, n_layers=2, d_ff=16,
            max_len=16, dropout_rate=0.0,
        )
        values.update(overrides)
        return ModelConfig(**values)
    return _make


@pytest.fixture
def tiny_config(make_config):
    """Tiny PBD config: sharing, segment embedding and PBD all on."""
    return make_config()


@pytest.fixture
def tiny_model(tiny_config):
    """Tiny model initialized from seed 0."""
    return init_model(tiny_config, seed=0)


@pytest.fixture
def vocab():
    """Vocabulary over 'abcde' (9 symbols with specials)."""
    return build_vocab("abcde")


@pytest.fixture
def copy_examples():
    """Copy-task pairs over the 'abcde' alphabet."""
    words = ["abc", "bad", "cab", "dec", "ace", "bead", "cede", "dab", "add", "ebb", "deed", "bee"]
    return [Example(w, w) for w in words]


@pytest.fixture
def sample_tsv(temp_dir, copy_examples):
    """Copy-task TSV file."""
    path = temp_dir / "copy.tsv"
    write_tsv(path, copy_examples)
    return path
