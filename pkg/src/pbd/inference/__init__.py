"""Decoding and evaluation."""

from pbd.inference.metrics import (
    EvalReport,
    char_error_rate,
    decode_texts,
    evaluate,
    exact_match,
)
from pbd.inference.search import (
    Beam,
    DecodeResult,
    Hypothesis,
    beam_search,
    decode_ids,
    encode_source,
    greedy_decode,
)

__all__ = [
    "Beam",
    "DecodeResult",
    "EvalReport",
    "Hypothesis",
    "beam_search",
    "char_error_rate",
    "decode_ids",
    "decode_texts",
    "encode_source",
    "evaluate",
    "exact_match",
    "greedy_decode",
]
