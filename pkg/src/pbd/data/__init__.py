"""Character vocabularies, corpora, batching and synthetic corruption."""

from pbd.data.corpus import (
    Batch,
    Example,
    collate,
    load_tsv,
    make_batches,
    split_holdout,
    write_tsv,
)
from pbd.data.corruption import corrupt_word, load_word_list, synthesize_pairs
from pbd.data.vocab import (
    BOS_ID,
    EOS_ID,
    PAD_ID,
    UNK_ID,
    Vocab,
    build_vocab,
    decode_text,
    encode_text,
)
from pbd.data.words import BUILTIN_WORDS

__all__ = [
    "BOS_ID",
    "BUILTIN_WORDS",
    "Batch",
    "EOS_ID",
    "Example",
    "PAD_ID",
    "UNK_ID",
    "Vocab",
    "build_vocab",
    "collate",
    "corrupt_word",
    "decode_text",
    "encode_text",
    "load_tsv",
    "load_word_list",
    "make_batches",
    "split_holdout",
    "synthesize_pairs",
    "write_tsv",
]
