"""Tests for variant comparison and the desk-scale experiments."""

from pathlib import Path

import numpy as np
import pytest

from pbd.config import CorruptionConfig, DataConfig, RunConfig, TrainingConfig, load_config
from pbd.data import BUILTIN_WORDS, Example, synthesize_pairs, write_tsv
from pbd.errors import ConfigError, DataError
from pbd.experiments import VARIANTS, compare_variants, variant_config
from pbd.inference import evaluate
from pbd.training import load_checkpoint, train_from_config

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def _small_run(sample_tsv, temp_dir, **data):
    return RunConfig(
        model=dict(d_model=8, n_heads=2, n_layers=1, d_ff=16, max_len=12, dropout_rate=0.0),
        training=TrainingConfig(steps=2, batch_size=4, warmup=2, checkpoint_every=0),
        data=DataConfig(train_path=sample_tsv, checkpoint_dir=temp_dir / "ckpt", **data),
    )


def test_compare_all_variants(sample_tsv, temp_dir):
    """Test every variant is trained and scored from the same seeds."""
    comparison = compare_variants(_small_run(sample_tsv, temp_dir, holdout_fraction=0.25), beam_size=2)
    names = [r.name for r in comparison.results]
    assert names == list(VARIANTS)
    params = {r.name: r.params for r in comparison.results}
    assert params["no_future"] == params["pbd"]
    assert params["no_sharing"] > params["pbd"]
    assert params["transformer"] < params["no_sharing"]
    layers = {r.name: r.layers for r in comparison.results}
    assert layers["pbd_deep"] == layers["transformer_deep"] == 2 * layers["pbd"] == 2
    # doubling a shared model adds one cross-attention block (+ its norm) over the unshared one
    assert params["pbd_deep"] - params["no_sharing"] == 4 * 8 * 8 + 2 * 8
    assert params["pbd_deep"] < params["transformer_deep"]
    for r in comparison.results:
        assert np.isfinite(r.final_loss)
        assert r.greedy.n_examples == 3
        assert 0.0 <= r.beam.exact_match <= 1.0


def test_comparison_table(sample_tsv, temp_dir):
    """Test the report has a header row and one row per variant."""
    comparison = compare_variants(
        _small_run(sample_tsv, temp_dir, holdout_fraction=0.25), ["pbd", "transformer"], beam_size=3
    )
    table = comparison.table()
    assert table[0][-2:] == ["beam3_em", "beam3_cer"]
    assert [row[0] for row in table[1:]] == ["pbd", "transformer"]
    assert comparison.results[0].to_dict()["beam"]["n_examples"] == 3


def test_compare_unknown_variant(sample_tsv, temp_dir):
    """Test an unknown variant name."""
    with pytest.raises(ConfigError, match="bogus"):
        compare_variants(_small_run(sample_tsv, temp_dir, holdout_fraction=0.25), ["pbd", "bogus"])


def test_variant_config_flags_and_depth(make_config):
    """Test deep variants double the layers and keep their base flags."""
    base = make_config(n_layers=3)
    deep = variant_config(base, "pbd_deep")
    assert deep.n_layers == 6 and deep.use_pbd and deep.share_params
    plain = variant_config(base, "transformer_deep")
    assert plain.n_layers == 6
    assert not (plain.use_pbd or plain.use_segment or plain.share_params)
    assert variant_config(base, "no_future").n_layers == 3
    with pytest.raises(ConfigError):
        variant_config(base, "wide")


def test_compare_needs_heldout(sample_tsv, temp_dir):
    """Test comparison without held-out data."""
    with pytest.raises(DataError):
        compare_variants(_small_run(sample_tsv, temp_dir, holdout_fraction=0.0))


def _with_data(config: RunConfig, temp_dir: Path, train_path: Path) -> RunConfig:
    data = config.data.model_copy(
        update={"train_path": train_path, "checkpoint_dir": temp_dir / "ckpt", "loss_log": None}
    )
    return config.model_copy(update={"data": data})


@pytest.mark.slow
def test_copy_task_converges(temp_dir):
    """Test the shipped copy-task config learns to copy held-out words."""
    rng = np.random.default_rng(0)
    letters = list("abcdefghijklmnopqrstuvwxyz")
    words = ["".join(rng.choice(letters, size=int(rng.integers(3, 11)))) for _ in range(4000)]
    path = temp_dir / "copy.tsv"
    write_tsv(path, [Example(w, w) for w in words])

    config = _with_data(load_config(CONFIGS / "copy_task.yaml"), temp_dir, path)
    result = train_from_config(config)
    assert result.final_loss < 0.05
    assert result.heldout is not None
    assert result.heldout["exact_match"] > 0.99


@pytest.mark.slow
def test_synthetic_correction_experiment(temp_dir):
    """Test PBD and the plain baseline both clear 80% on synthetic spelling correction."""
    corruption = CorruptionConfig(p_sub=0.05, p_del=0.04, p_ins=0.04, p_swap=0.02, seed=1)
    path = temp_dir / "spell.tsv"
    write_tsv(path, synthesize_pairs(BUILTIN_WORDS, corruption, count=20000))

    config = _with_data(load_config(CONFIGS / "spell_synthetic.yaml"), temp_dir, path)
    comparison = compare_variants(config, ["pbd", "transformer"], beam_size=4)
    for r in comparison.results:
        assert r.greedy.exact_match >= 0.8, r.to_dict()
    assert len(comparison.table()) == 3


@pytest.mark.slow
def test_converged_copy_model_on_training_set(temp_dir):
    """Test a converged copy model reproduces its training inputs."""
    words = sorted({w for w in BUILTIN_WORDS if len(w) <= 10})[:600]
    path = temp_dir / "copy.tsv"
    examples = [Example(w, w) for w in words]
    write_tsv(path, examples)
    config = _with_data(load_config(CONFIGS / "copy_task.yaml"), temp_dir, path)
    config = config.model_copy(
        update={"data": config.data.model_copy(update={"holdout_fraction": 0.0})}
    )
    train_from_config(config)
    ckpt = load_checkpoint(temp_dir / "ckpt" / "last.pbdc")
    assert evaluate(ckpt.model, ckpt.vocab, examples).exact_match > 0.99
