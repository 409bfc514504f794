"""Character vocabulary with fixed special symbols."""

import unicodedata
from collections.abc import Iterable, Sequence
from dataclasses import dataclass

from pbd.errors import DataError

PAD_ID = 0
BOS_ID = 1
EOS_ID = 2
UNK_ID = 3
SPECIALS = ("<pad>", "<bos>", "<eos>", "<unk>")


def normalize_text(text: str, lowercase: bool = False) -> str:
    """NFC-normalize (and optionally lowercase) a string."""
    text = unicodedata.normalize("NFC", text)
    return text.lower() if lowercase else text


@dataclass(frozen=True)
class Vocab:
    """Bijection between symbols and ids; specials occupy ids 0..3."""
    symbols: tuple[str, ...]

    def __post_init__(self) -> None:
        if self.symbols[: len(SPECIALS)] != SPECIALS:
            raise DataError("vocabulary must start with the special symbols")
        if len(set(self.symbols)) != len(self.symbols):
            raise DataError("vocabulary symbols must be unique")
        object.__setattr__(self, "_index", {s: i for i, s in enumerate(self.symbols)})

    def __len__(self) -> int:
        return len(self.symbols)

    @property
    def characters(self) -> tuple[str, ...]:
        return self.symbols[len(SPECIALS):]

    def id_of(self, symbol: str) -> int:
        return self._index.get(symbol, UNK_ID)  # type: ignore[attr-defined]

    def encode(self, text: str) -> list[int]:
        return [self.id_of(ch) for ch in text]

    def decode(self, ids: Iterable[int]) -> str:
        """Characters up to the first EOS; other specials are dropped."""
        out = []
        for i in ids:
            i = int(i)
            if i == EOS_ID:
                break
            if i < len(SPECIALS):
                continue
            out.append(self.symbols[i])
        return "".join(out)

    def unknown_characters(self, texts: Iterable[str]) -> set[str]:
        index = self._index  # type: ignore[attr-defined]
        return {ch for text in texts for ch in text if ch not in index}

    @classmethod
    def from_alphabet(cls, alphabet: Iterable[str]) -> "Vocab":
        chars = sorted(set(alphabet))
        if not chars:
            raise DataError("cannot build a vocabulary from an empty alphabet")
        return cls(SPECIALS + tuple(chars))


def build_vocab(source: str | Sequence[str] | Iterable[str]) -> Vocab:
    """Vocabulary from an explicit alphabet string or from a corpus of strings.

    Ordering is deterministic: specials, then sorted unique characters.
    """
    if isinstance(source, str):
        return Vocab.from_alphabet(source)
    chars: set[str] = set()
    for text in source:
        chars.update(text)
    if not chars:
        raise DataError("cannot build a vocabulary from an empty corpus")
    return Vocab.from_alphabet(chars)


def encode_text(vocab: Vocab, text: str) -> list[int]:
    return vocab.encode(text)


def decode_text(vocab: Vocab, ids: Iterable[int]) -> str:
    return vocab.decode(ids)
