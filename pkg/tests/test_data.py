"""Tests for vocabulary, corpus loading, batching and synthetic corruption."""

import Levenshtein
import numpy as np
import pytest

from pbd.config import CorruptionConfig
from pbd.data import (
    BOS_ID,
    BUILTIN_WORDS,
    EOS_ID,
    PAD_ID,
    UNK_ID,
    Example,
    build_vocab,
    corrupt_word,
    decode_text,
    encode_text,
    load_tsv,
    load_word_list,
    make_batches,
    split_holdout,
    synthesize_pairs,
    write_tsv,
)
from pbd.errors import CorpusNotFoundError, DataError

NO_NOISE = CorruptionConfig(p_sub=0, p_del=0, p_ins=0, p_swap=0)


def test_vocab_from_alphabet():
    """Test specials first, then sorted characters."""
    vocab = build_vocab("ba")
    assert vocab.symbols == ("<pad>", "<bos>", "<eos>", "<unk>", "a", "b")
    assert (PAD_ID, BOS_ID, EOS_ID, UNK_ID) == (0, 1, 2, 3)
    assert vocab.id_of("a") == 4
    assert vocab.id_of("b") == 5


def test_vocab_from_corpus_is_order_independent():
    """Test corpus order does not change the vocabulary."""
    assert build_vocab(["ba", "ab"]) == build_vocab(["ab"]) == build_vocab(["b", "a"])


def test_vocab_empty_input():
    """Test empty corpus error."""
    with pytest.raises(DataError):
        build_vocab([])
    with pytest.raises(DataError):
        build_vocab("")


def test_encode_decode(vocab):
    """Test encoding, unknown characters and decoding rules."""
    assert decode_text(vocab, encode_text(vocab, "badce")) == "badce"
    assert encode_text(vocab, "") == []
    assert encode_text(vocab, "az") == [vocab.id_of("a"), UNK_ID]
    ids = [PAD_ID, vocab.id_of("a"), PAD_ID, vocab.id_of("b"), EOS_ID, vocab.id_of("c")]
    assert decode_text(vocab, ids) == "ab"


def test_round_trip_random_strings(vocab):
    """Test decode(encode(s)) == s for random strings over the alphabet."""
    rng = np.random.default_rng(0)
    for _ in range(200):
        text = "".join(rng.choice(list("abcde"), size=int(rng.integers(0, 12))))
        assert decode_text(vocab, encode_text(vocab, text)) == text


def test_load_tsv(temp_dir):
    """Test basic loading and CRLF handling."""
    path = temp_dir / "data.tsv"
    path.write_bytes(b"abc\tabd\r\nxy\txz\n")
    assert load_tsv(path) == [Example("abc", "abd"), Example("xy", "xz")]


def test_load_tsv_empty_file(temp_dir):
    """Test empty file gives no examples."""
    path = temp_dir / "empty.tsv"
    path.write_text("")
    assert load_tsv(path) == []


def test_load_tsv_two_tabs(temp_dir):
    """Test malformed line reports its line number."""
    path = temp_dir / "bad.tsv"
    path.write_text("ab\tab\na\tb\tc\n")
    with pytest.raises(DataError, match=":2:"):
        load_tsv(path)


def test_load_tsv_empty_field(temp_dir):
    """Test a line with an empty target."""
    path = temp_dir / "bad.tsv"
    path.write_text("ab\t\n")
    with pytest.raises(DataError, match=":1:"):
        load_tsv(path)


def test_load_tsv_missing(temp_dir):
    """Test missing corpus error names the path."""
    missing = temp_dir / "nope.tsv"
    with pytest.raises(CorpusNotFoundError, match="nope.tsv"):
        load_tsv(missing)


def test_load_tsv_lowercase(temp_dir):
    """Test optional lowercasing."""
    path = temp_dir / "data.tsv"
    path.write_text("ABC\tAbc\n")
    assert load_tsv(path, lowercase=True) == [Example("abc", "abc")]


def test_write_then_load(temp_dir, copy_examples):
    """Test TSV written by write_tsv loads back in order."""
    path = temp_dir / "out.tsv"
    write_tsv(path, copy_examples)
    assert load_tsv(path) == copy_examples


def test_make_batches_single_example(vocab):
    """Test source/target id layout for one example."""
    a, b, c = (vocab.id_of(ch) for ch in "abc")
    (batch,) = make_batches([Example("ab", "abc")], vocab, batch_size=4, seed=0)
    assert batch.source_ids.tolist() == [[a, b, EOS_ID]]
    assert batch.target_input_ids.tolist() == [[BOS_ID, a, b, c]]
    assert batch.target_output_ids.tolist() == [[a, b, c, EOS_ID]]
    assert batch.source_lengths.tolist() == [3]
    assert batch.target_lengths.tolist() == [4]


def test_make_batches_shift_invariant(vocab, copy_examples):
    """Test target_input[1:] == target_output[:-1] on every row up to padding."""
    for batch in make_batches(copy_examples, vocab, batch_size=5, seed=1):
        for row, length in enumerate(batch.target_lengths):
            inp = batch.target_input_ids[row, :length]
            out = batch.target_output_ids[row, :length]
            assert inp[0] == BOS_ID
            assert out[length - 1] == EOS_ID
            assert inp[1:].tolist() == out[:-1].tolist()
            assert (batch.target_input_ids[row, length:] == PAD_ID).all()


def test_make_batches_equal_lengths_have_no_padding(vocab):
    """Test batches of equal-length examples contain no PAD."""
    examples = [Example(w, w) for w in ["abc", "bcd", "cde", "dea"]]
    (batch,) = make_batches(examples, vocab, batch_size=4, seed=0)
    assert (batch.source_ids != PAD_ID).all()
    assert (batch.target_input_ids != PAD_ID).all()


def test_make_batches_deterministic(vocab, copy_examples):
    """Test same seed gives the same batch sequence; another seed reorders."""
    first = make_batches(copy_examples, vocab, batch_size=3, seed=7)
    second = make_batches(copy_examples, vocab, batch_size=3, seed=7)
    assert len(first) == 4
    for a, b in zip(first, second):
        np.testing.assert_array_equal(a.source_ids, b.source_ids)
    other = make_batches(copy_examples, vocab, batch_size=12, seed=8)[0]
    same = make_batches(copy_examples, vocab, batch_size=12, seed=7)[0]
    assert not np.array_equal(other.source_ids, same.source_ids)


def test_make_batches_too_long(vocab):
    """Test an example exceeding max_len is reported."""
    with pytest.raises(DataError, match="abcde"):
        make_batches([Example("abcde", "abcde")], vocab, batch_size=1, seed=0, max_len=5)


def test_split_holdout(copy_examples):
    """Test holdout split sizes and coverage."""
    train, held = split_holdout(copy_examples, 0.25, seed=0)
    assert len(held) == 3
    assert sorted(e.source for e in train + held) == sorted(e.source for e in copy_examples)


def test_corrupt_word_identity():
    """Test zero probabilities leave every word unchanged."""
    rng = np.random.default_rng(0)
    for word in BUILTIN_WORDS[:200]:
        assert corrupt_word(word, NO_NOISE, rng) == word


def test_corrupt_word_delete_all():
    """Test p_del=1 deletes everything."""
    config = CorruptionConfig(p_sub=0, p_del=1.0, p_ins=0, p_swap=0)
    assert corrupt_word("school", config, np.random.default_rng(1)) == ""


def test_corrupt_word_deterministic():
    """Test fixed seed gives a fixed corruption."""
    config = CorruptionConfig(p_sub=0.2, p_del=0, p_ins=0, p_swap=0)
    first = corrupt_word("school", config, np.random.default_rng(42))
    second = corrupt_word("school", config, np.random.default_rng(42))
    assert first == second
    assert len(first) == len("school")


def test_corrupt_word_swap():
    """Test p_swap=1 swaps adjacent pairs."""
    config = CorruptionConfig(p_sub=0, p_del=0, p_ins=0, p_swap=1.0)
    assert corrupt_word("abcd", config, np.random.default_rng(0)) == "badc"
    assert corrupt_word("abc", config, np.random.default_rng(0)) == "bac"


def test_corrupt_word_edit_rate():
    """Test mean edit distance over 10,000 samples is within 15% of length * sum(p)."""
    config = CorruptionConfig()
    assert config.p_swap > 0
    rng = np.random.default_rng(0)
    words = [BUILTIN_WORDS[int(i)] for i in rng.integers(len(BUILTIN_WORDS), size=10_000)]
    distances = [Levenshtein.distance(corrupt_word(w, config, rng), w) for w in words]
    expected = np.mean([len(w) for w in words]) * config.total
    assert abs(np.mean(distances) - expected) / expected < 0.15


def test_synthesize_pairs(copy_examples):
    """Test synthesized pairs are deterministic per seed and target the clean word."""
    config = CorruptionConfig(p_sub=0.1, p_del=0.05, p_ins=0.05, p_swap=0.05, seed=3)
    first = synthesize_pairs(BUILTIN_WORDS, config, count=100)
    assert first == synthesize_pairs(BUILTIN_WORDS, config, count=100)
    assert all(ex.target in BUILTIN_WORDS and ex.source for ex in first)
    assert synthesize_pairs(["ab", "cd"], NO_NOISE) == [Example("ab", "ab"), Example("cd", "cd")]


def test_corruption_config_rejects_total_above_one():
    """Test probabilities summing above 1."""
    with pytest.raises(ValueError):
        CorruptionConfig(p_sub=0.6, p_del=0.6, p_ins=0, p_swap=0)


def test_load_word_list(temp_dir):
    """Test word list loading skips blanks."""
    path = temp_dir / "words.txt"
    path.write_text("Alpha\n\n beta \n")
    assert load_word_list(path) == ["alpha", "beta"]
    (temp_dir / "blank.txt").write_text("\n")
    with pytest.raises(DataError):
        load_word_list(temp_dir / "blank.txt")


def test_builtin_words_are_lowercase_letters():
    """Test the built-in list fits the 26-letter alphabet."""
    assert len(BUILTIN_WORDS) > 300
    assert all(w.isalpha() and w.islower() and w.isascii() for w in BUILTIN_WORDS)
