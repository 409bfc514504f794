"""Tests for decoding and evaluation."""

import itertools
import math

import numpy as np
import pytest

from pbd.config import DecodeConfig, ModelConfig
from pbd.data.corpus import Example
from pbd.data.vocab import BOS_ID, EOS_ID, PAD_ID, UNK_ID
from pbd.errors import ContractError, DataError, VocabMismatchError
from pbd.inference import (
    beam_search,
    char_error_rate,
    decode_texts,
    evaluate,
    exact_match,
    greedy_decode,
)
from pbd.inference.search import BLOCKED_IDS, token_log_probs
from pbd.model import decode_parallel, encode, init_model
from pbd.tensor import precision


def _always_emit(model, token):
    """Force every decoder output to prefer `token` (untied output only)."""
    model.param("decoder.norm.gain").data[:] = 0.0
    model.param("decoder.norm.bias").data[:] = 1.0
    weight = model.param("output.weight").data
    weight[:] = 0.0
    weight[:, token] = 1.0
    return model


# ----------------------------------------------------------------- metrics

def test_exact_match():
    """Test exact match examples."""
    assert exact_match(["ab", "cd"], ["ab", "cd"]) == 1.0
    assert exact_match(["x", "y"], ["ab", "cd"]) == 0.0
    assert exact_match(["ab", "cd"], ["ab", "ce"]) == 0.5


def test_exact_match_length_mismatch():
    """Test unequal list lengths."""
    with pytest.raises(ContractError):
        exact_match(["a"], ["a", "b"])


def test_char_error_rate():
    """Test CER examples."""
    assert char_error_rate(["abc"], ["abc"]) == 0.0
    assert math.isclose(char_error_rate(["abd"], ["abc"]), 1 / 3)
    assert char_error_rate([""], ["abc"]) == 1.0
    assert math.isclose(char_error_rate(["ab", "xyz"], ["abc", "xy"]), 2 / 5)


def test_char_error_rate_empty_reference():
    """Test an empty reference string."""
    with pytest.raises(ContractError):
        char_error_rate(["a"], [""])


# ------------------------------------------------------------------ search

def test_greedy_truncates_at_max_steps(make_config):
    """Test max_steps=1 yields one token and the truncation flag."""
    model = _always_emit(init_model(make_config(tie_output_embedding=False)), 5)
    result = greedy_decode(model, [4, EOS_ID], max_steps=1)
    assert result.ids == [5]
    assert result.truncated


def test_greedy_stops_at_eos(make_config):
    """Test a model that prefers EOS stops immediately."""
    model = _always_emit(init_model(make_config(tie_output_embedding=False)), EOS_ID)
    result = greedy_decode(model, [4, EOS_ID], max_steps=5)
    assert result.ids == []
    assert not result.truncated


def test_greedy_tie_breaks_to_lowest_id(make_config):
    """Test equal logits pick the lowest token id."""
    model = _always_emit(init_model(make_config(tie_output_embedding=False)), 6)
    model.param("output.weight").data[:, 5] = 1.0
    result = greedy_decode(model, [4, EOS_ID], max_steps=2)
    assert result.ids == [5, 5]


@pytest.mark.parametrize("blocked", [PAD_ID, BOS_ID, UNK_ID])
def test_special_tokens_are_never_generated(make_config, blocked):
    """Test PAD, BOS and UNK are skipped even when the model prefers them."""
    model = _always_emit(init_model(make_config(tie_output_embedding=False)), blocked)
    model.param("output.weight").data[:, 7] = 0.5
    assert greedy_decode(model, [4, EOS_ID], max_steps=3).ids == [7, 7, 7]
    assert beam_search(model, [4, EOS_ID], k=3, max_steps=3).ids == [7, 7, 7]


def test_token_log_probs_blocks_specials():
    """Test blocked ids get -inf and the rest renormalize."""
    logp = token_log_probs(np.zeros(6))
    assert all(logp[i] == -math.inf for i in BLOCKED_IDS)
    assert math.isclose(float(np.exp(logp).sum()), 1.0)
    assert math.isclose(float(logp[EOS_ID]), math.log(1 / 3))


def test_max_steps_bounds(tiny_model):
    """Test max_steps outside [1, max_len]."""
    with pytest.raises(ContractError):
        greedy_decode(tiny_model, [4, EOS_ID], max_steps=0)
    with pytest.raises(ContractError):
        beam_search(tiny_model, [4, EOS_ID], k=2, max_steps=17)


def test_greedy_is_deterministic(tiny_model):
    """Test repeated greedy decoding gives identical output."""
    first = greedy_decode(tiny_model, [4, 5, 6, EOS_ID], max_steps=6)
    second = greedy_decode(tiny_model, [4, 5, 6, EOS_ID], max_steps=6)
    assert first == second


def test_greedy_matches_parallel_argmax(make_config):
    """Test greedy output fed back teacher-forced reproduces its argmax choices."""
    model = init_model(make_config(precision="float64"), seed=3)
    source = [4, 5, 6, 7, EOS_ID]
    result = greedy_decode(model, source, max_steps=8)
    chosen = result.ids + ([] if result.truncated else [EOS_ID])
    logits = decode_parallel(model, encode(model, source), [BOS_ID, *chosen[:-1]]).data
    assert token_log_probs(logits).argmax(axis=-1).tolist() == chosen


def test_beam_of_one_equals_greedy():
    """Test k=1 beam search equals greedy decoding on 100 random models and inputs."""
    rng = np.random.default_rng(0)
    for trial in range(100):
        config = ModelConfig(vocab_size=7, d_model=8, n_heads=2, n_layers=1, d_ff=16,
                             max_len=8, dropout_rate=0.0)
        model = init_model(config, seed=trial)
        source = [*rng.integers(EOS_ID + 1, 7, size=int(rng.integers(1, 6))).tolist(), EOS_ID]
        greedy = greedy_decode(model, source, max_steps=6)
        beam = beam_search(model, source, k=1, alpha=0.6, max_steps=6)
        assert beam.ids == greedy.ids
        assert beam.truncated == greedy.truncated
        assert math.isclose(beam.score, greedy.score, rel_tol=1e-12, abs_tol=1e-12)


def _exhaustive_best(model, source, max_steps, alpha):
    """Best normalized score over every EOS-terminated sequence and every max_steps-long prefix."""
    vocab = model.config.vocab_size
    enc = encode(model, source)
    body = [t for t in range(vocab) if t != EOS_ID and t not in BLOCKED_IDS]
    candidates = [
        [*prefix, EOS_ID]
        for length in range(1, max_steps + 1)
        for prefix in itertools.product(body, repeat=length - 1)
    ]
    candidates += [list(p) for p in itertools.product(body, repeat=max_steps)]
    best, best_score = None, -math.inf
    for seq in candidates:
        logp = token_log_probs(decode_parallel(model, enc, [BOS_ID, *seq[:-1]]).data)
        total = float(sum(logp[i, tok] for i, tok in enumerate(seq)))
        score = total / len(seq) ** alpha
        if score > best_score:
            best, best_score = seq, score
    return best, best_score


@pytest.mark.parametrize("alpha", [0.0, 0.6])
def test_wide_beam_equals_exhaustive_search(make_config, alpha):
    """Test a beam wide enough to keep every candidate recovers the exhaustive optimum."""
    max_steps = 3
    model = init_model(make_config(vocab_size=7, precision="float64"), seed=11)
    source = [4, 5, EOS_ID]
    with precision("float64"):
        best, best_score = _exhaustive_best(model, source, max_steps, alpha)
        result = beam_search(model, source, k=4**max_steps, alpha=alpha, max_steps=max_steps)
    expected = best if best[-1] != EOS_ID else best[:-1]
    assert result.ids == expected
    assert result.truncated == (best[-1] != EOS_ID)
    assert math.isclose(result.normalized(alpha), best_score, rel_tol=1e-9)


def test_beam_score_never_drops_as_width_grows():
    """Test the best normalized score is non-decreasing in k over random models."""
    rng = np.random.default_rng(7)
    for seed in range(40):
        config = ModelConfig(vocab_size=8, d_model=8, n_heads=2, n_layers=1, d_ff=16,
                             max_len=8, dropout_rate=0.0)
        model = init_model(config, seed=seed)
        source = [*rng.integers(4, 8, size=int(rng.integers(1, 6))).tolist(), EOS_ID]
        scores = [
            beam_search(model, source, k=k, alpha=0.6, max_steps=5).normalized(0.6)
            for k in (1, 2, 3, 5, 8)
        ]
        assert all(b >= a for a, b in zip(scores, scores[1:])), (seed, scores)


def test_wider_beams_never_beat_exhaustive(make_config):
    """Test every beam width scores at most the exhaustive optimum."""
    max_steps, alpha = 3, 0.6
    model = init_model(make_config(vocab_size=7, precision="float64"), seed=12)
    source = [4, 4, 6, EOS_ID]
    with precision("float64"):
        _, best_score = _exhaustive_best(model, source, max_steps, alpha)
        for k in (1, 2, 3, 5, 25):
            result = beam_search(model, source, k=k, alpha=alpha, max_steps=max_steps)
            assert result.normalized(alpha) <= best_score + 1e-12


def test_beam_size_must_be_positive(tiny_model):
    """Test k=0."""
    with pytest.raises(ContractError):
        beam_search(tiny_model, [4, EOS_ID], k=0)


# -------------------------------------------------------------- evaluation

def test_evaluate_report(make_config, vocab):
    """Test a model that emits EOS immediately scores zero exact match."""
    model = _always_emit(init_model(make_config(tie_output_embedding=False)), EOS_ID)
    report = evaluate(model, vocab, [Example("ab", "ab"), Example("c", "c")])
    assert report.n_examples == 2
    assert report.exact_match == 0.0
    assert report.cer == 1.0
    assert report.lines() == ["exact_match: 0.000000", "cer: 1.000000", "n_examples: 2"]


def test_evaluate_greedy_equals_beam_one(tiny_model, vocab, copy_examples):
    """Test beam_size=1 is greedy decoding."""
    a = evaluate(tiny_model, vocab, copy_examples, DecodeConfig(beam_size=1))
    b = evaluate(tiny_model, vocab, copy_examples, DecodeConfig(beam_size=1, length_alpha=0.0))
    assert a == b


def test_evaluate_empty(tiny_model, vocab):
    """Test an empty evaluation set is an error."""
    with pytest.raises(DataError):
        evaluate(tiny_model, vocab, [])


def test_evaluate_unknown_characters(tiny_model, vocab):
    """Test data outside the model vocabulary."""
    with pytest.raises(VocabMismatchError):
        evaluate(tiny_model, vocab, [Example("abz", "abz")])


def test_decode_texts_counts_truncation(make_config, vocab):
    """Test decode_texts reports truncated hypotheses."""
    model = _always_emit(init_model(make_config(tie_output_embedding=False)), vocab.id_of("a"))
    hyps, truncated = decode_texts(model, vocab, ["b", "cd"], DecodeConfig(max_steps=3))
    assert hyps == ["aaa", "aaa"]
    assert truncated == 2
