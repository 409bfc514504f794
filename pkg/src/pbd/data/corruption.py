"""Synthetic character-level corruption (noisy word -> clean word pairs)."""

from collections.abc import Sequence
from pathlib import Path

import numpy as np

from pbd.config import CorruptionConfig
from pbd.data.corpus import Example
from pbd.errors import CorpusNotFoundError, DataError
from pbd.utils.logging import get_logger

logger = get_logger(__name__)

_MAX_RESAMPLE = 10


def _other_char(ch: str, alphabet: str, rng: np.random.Generator) -> str:
    choices = [c for c in alphabet if c != ch] or list(alphabet)
    return choices[int(rng.integers(len(choices)))]


def corrupt_word(word: str, config: CorruptionConfig, rng: np.random.Generator) -> str:
    """Apply independent per-position edits to a word.

    One uniform draw per position selects substitution (a different
    character), deletion, insertion (a random character before the current
    one), swap with the next character (consumes both) or no edit.
    """
    p_sub = config.p_sub
    p_del = p_sub + config.p_del
    p_ins = p_del + config.p_ins
    p_swap = p_ins + config.p_swap
    alphabet = config.alphabet

    out: list[str] = []
    i = 0
    while i < len(word):
        ch = word[i]
        u = rng.random()
        if u < p_sub:
            out.append(_other_char(ch, alphabet, rng))
        elif u < p_del:
            pass
        elif u < p_ins:
            out.append(alphabet[int(rng.integers(len(alphabet)))])
            out.append(ch)
        elif u < p_swap and i + 1 < len(word):
            out.append(word[i + 1])
            out.append(ch)
            i += 1
        else:
            out.append(ch)
        i += 1
    return "".join(out)


def synthesize_pairs(
    words: Sequence[str], config: CorruptionConfig, count: int | None = None
) -> list[Example]:
    """Corrupted -> clean pairs; one per word, or `count` words sampled with replacement.

    Corruptions that come out empty are redrawn a few times before falling
    back to the clean word.
    """
    if not words:
        raise DataError("word list is empty")
    rng = np.random.default_rng(config.seed)
    if count is None:
        chosen = list(words)
    else:
        chosen = [words[int(i)] for i in rng.integers(len(words), size=count)]

    pairs = []
    for word in chosen:
        noisy = ""
        for _ in range(_MAX_RESAMPLE):
            noisy = corrupt_word(word, config, rng)
            if noisy:
                break
        pairs.append(Example(noisy or word, word))
    logger.debug(f"Synthesized {len(pairs)} pairs (seed={config.seed}, total p={config.total:.3f})")
    return pairs


def load_word_list(path: Path, lowercase: bool = True) -> list[str]:
    """One word per line; blank lines and surrounding whitespace are ignored."""
    path = Path(path)
    if not path.exists():
        raise CorpusNotFoundError(path)
    words = [w.strip() for w in path.read_text(encoding="utf-8").splitlines()]
    words = [w.lower() if lowercase else w for w in words if w]
    if not words:
        raise DataError(f"{path}: no words found")
    return words
