"""TSV corpora and padded training batches."""

import os
import tempfile
from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from pbd.data.vocab import BOS_ID, EOS_ID, PAD_ID, Vocab, normalize_text
from pbd.errors import CorpusNotFoundError, DataError
from pbd.utils.logging import get_logger

logger = get_logger(__name__)


@dataclass(frozen=True)
class Example:
    """One source -> target pair."""
    source: str
    target: str

    def __post_init__(self) -> None:
        if not self.source or not self.target:
            raise DataError(f"example has an empty side: {self.source!r} -> {self.target!r}")


@dataclass
class Batch:
    """Padded id matrices; target_input is target_output shifted right by one (BOS first)."""
    source_ids: np.ndarray
    target_input_ids: np.ndarray
    target_output_ids: np.ndarray
    source_lengths: np.ndarray
    target_lengths: np.ndarray

    @property
    def size(self) -> int:
        return int(self.source_ids.shape[0])

    @property
    def num_target_tokens(self) -> int:
        return int(self.target_lengths.sum())


def load_tsv(path: Path, lowercase: bool = False) -> list[Example]:
    """Read `source<TAB>target` lines; CRLF and CR line ends are accepted.

    Raises:
        CorpusNotFoundError: path does not exist.
        DataError: a line is not exactly two non-empty fields.
    """
    path = Path(path)
    if not path.exists():
        raise CorpusNotFoundError(path)
    try:
        text = path.read_bytes().decode("utf-8")
    except UnicodeDecodeError as e:
        raise DataError(f"{path}: not valid UTF-8 ({e.reason} at byte {e.start})") from e

    lines = text.replace("\r\n", "\n").replace("\r", "\n").split("\n")
    if lines and lines[-1] == "":
        lines.pop()

    examples = []
    for lineno, line in enumerate(lines, start=1):
        fields = line.split("\t")
        if len(fields) != 2:
            raise DataError(f"{path}:{lineno}: expected 1 tab, found {len(fields) - 1}")
        source, target = (normalize_text(f, lowercase) for f in fields)
        if not source or not target:
            raise DataError(f"{path}:{lineno}: empty source or target")
        examples.append(Example(source, target))

    logger.debug(f"Loaded {len(examples)} examples from {path}")
    return examples


def write_tsv(path: Path, examples: Iterable[Example]) -> None:
    """Write examples as UTF-8 TSV with LF line ends (atomic replace)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    body = "".join(f"{ex.source}\t{ex.target}\n" for ex in examples)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as f:
            f.write(body)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def encode_example(example: Example, vocab: Vocab) -> tuple[list[int], list[int], list[int]]:
    """(source + EOS, BOS + target, target + EOS) id lists."""
    target = vocab.encode(example.target)
    return vocab.encode(example.source) + [EOS_ID], [BOS_ID] + target, target + [EOS_ID]


def _pad(rows: Sequence[list[int]]) -> tuple[np.ndarray, np.ndarray]:
    lengths = np.array([len(r) for r in rows], dtype=np.int64)
    out = np.full((len(rows), int(lengths.max())), PAD_ID, dtype=np.int64)
    for i, row in enumerate(rows):
        out[i, : len(row)] = row
    return out, lengths


def collate(examples: Sequence[Example], vocab: Vocab, max_len: int | None = None) -> Batch:
    """Pad a group of examples to the longest source and target in the group."""
    encoded = []
    for ex in examples:
        src, tgt_in, tgt_out = encode_example(ex, vocab)
        if max_len is not None and max(len(src), len(tgt_in)) > max_len:
            raise DataError(
                f"example {ex.source!r} -> {ex.target!r} needs {max(len(src), len(tgt_in))} "
                f"positions, max_len is {max_len}"
            )
        encoded.append((src, tgt_in, tgt_out))
    source_ids, source_lengths = _pad([e[0] for e in encoded])
    target_input_ids, target_lengths = _pad([e[1] for e in encoded])
    target_output_ids, _ = _pad([e[2] for e in encoded])
    return Batch(source_ids, target_input_ids, target_output_ids, source_lengths, target_lengths)


def make_batches(
    examples: Sequence[Example],
    vocab: Vocab,
    batch_size: int,
    seed: int,
    max_len: int | None = None,
) -> list[Batch]:
    """Shuffle (deterministically per seed) and cut into fixed-size padded batches."""
    if batch_size < 1:
        raise DataError(f"batch_size must be >= 1, got {batch_size}")
    order = np.random.default_rng(seed).permutation(len(examples))
    shuffled = [examples[i] for i in order]
    return [
        collate(shuffled[start : start + batch_size], vocab, max_len)
        for start in range(0, len(shuffled), batch_size)
    ]


def split_holdout(
    examples: Sequence[Example], fraction: float, seed: int
) -> tuple[list[Example], list[Example]]:
    """Split off a held-out share of the examples (order within each part preserved)."""
    if not 0.0 <= fraction < 1.0:
        raise DataError(f"holdout fraction must be in [0, 1), got {fraction}")
    n_held = int(round(len(examples) * fraction))
    held = set(np.random.default_rng(seed).permutation(len(examples))[:n_held].tolist())
    train = [ex for i, ex in enumerate(examples) if i not in held]
    heldout = [ex for i, ex in enumerate(examples) if i in held]
    return train, heldout
