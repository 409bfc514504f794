"""Evaluation: exact match and character error rate."""

from collections.abc import Sequence
from dataclasses import asdict, dataclass

import Levenshtein

from pbd.config import DecodeConfig
from pbd.data.corpus import Example
from pbd.data.vocab import EOS_ID, Vocab
from pbd.errors import ContractError, DataError, VocabMismatchError
from pbd.inference.search import decode_ids
from pbd.model import TransformerModel
from pbd.utils.logging import get_logger

logger = get_logger(__name__)


def exact_match(hyps: Sequence[str], refs: Sequence[str]) -> float:
    """Fraction of hypotheses identical to their reference."""
    if len(hyps) != len(refs):
        raise ContractError(f"{len(hyps)} hypotheses for {len(refs)} references")
    if not refs:
        raise ContractError("no references")
    return sum(h == r for h, r in zip(hyps, refs)) / len(refs)


def char_error_rate(hyps: Sequence[str], refs: Sequence[str]) -> float:
    """Total edit distance divided by total reference length."""
    if len(hyps) != len(refs):
        raise ContractError(f"{len(hyps)} hypotheses for {len(refs)} references")
    if not refs or any(not r for r in refs):
        raise ContractError("references must be non-empty strings")
    edits = sum(Levenshtein.distance(h, r) for h, r in zip(hyps, refs))
    return edits / sum(len(r) for r in refs)


@dataclass
class EvalReport:
    exact_match: float
    cer: float
    n_examples: int
    truncated: int = 0

    def to_dict(self) -> dict[str, float | int]:
        return asdict(self)

    def lines(self) -> list[str]:
        return [
            f"exact_match: {self.exact_match:.6f}",
            f"cer: {self.cer:.6f}",
            f"n_examples: {self.n_examples}",
        ]


def decode_texts(
    model: TransformerModel,
    vocab: Vocab,
    sources: Sequence[str],
    decode: DecodeConfig | None = None,
) -> tuple[list[str], int]:
    """Decode source strings; returns hypotheses and the number of truncated ones."""
    decode = decode or DecodeConfig()
    hyps, truncated = [], 0
    for source in sources:
        ids = vocab.encode(source) + [EOS_ID]
        result = decode_ids(model, ids, decode.beam_size, decode.length_alpha, decode.max_steps)
        truncated += result.truncated
        hyps.append(vocab.decode(result.ids))
    return hyps, truncated


def evaluate(
    model: TransformerModel,
    vocab: Vocab,
    examples: Sequence[Example],
    decode: DecodeConfig | None = None,
) -> EvalReport:
    """Decode every source and score against the targets.

    Raises:
        DataError: no examples.
        VocabMismatchError: vocabulary and model disagree, or the data has unknown characters.
    """
    if not examples:
        raise DataError("evaluation set is empty")
    if model.config.vocab_size != len(vocab):
        raise VocabMismatchError(
            f"model has {model.config.vocab_size} output symbols, vocabulary has {len(vocab)}"
        )
    unknown = vocab.unknown_characters(t for ex in examples for t in (ex.source, ex.target))
    if unknown:
        raise VocabMismatchError(f"characters not in the model vocabulary: {''.join(sorted(unknown))}")

    refs = [ex.target for ex in examples]
    hyps, truncated = decode_texts(model, vocab, [ex.source for ex in examples], decode)
    report = EvalReport(exact_match(hyps, refs), char_error_rate(hyps, refs), len(refs), truncated)
    if truncated:
        logger.warning(f"{truncated} of {len(refs)} hypotheses hit max_steps")
    return report
