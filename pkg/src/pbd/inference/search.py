"""Greedy and beam-search decoding over the incremental decoder.

Every step reuses the decoder cache and the shrinking copy region, so a
hypothesis of length t costs one decode_step. PAD, BOS and UNK are never
generated. Ties between equal scores go to the lower token id (and, in beam
search, to the earlier parent).
"""

from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from pbd.data.vocab import BOS_ID, EOS_ID, PAD_ID, UNK_ID
from pbd.errors import ContractError
from pbd.model import DecoderCache, EncoderStates, TransformerModel, decode_step, encode
from pbd.utils.logging import get_logger

logger = get_logger(__name__)

BLOCKED_IDS = (PAD_ID, BOS_ID, UNK_ID)


@dataclass
class DecodeResult:
    """Generated ids (without the final EOS) and their total log-probability."""
    ids: list[int]
    truncated: bool
    score: float

    @property
    def length(self) -> int:
        """Scored length; the EOS of a finished result counts."""
        return len(self.ids) + (0 if self.truncated else 1)

    def normalized(self, alpha: float) -> float:
        return self.score / max(self.length, 1) ** alpha


@dataclass
class Hypothesis:
    tokens: list[int]
    score: float
    finished: bool = False

    def normalized(self, alpha: float) -> float:
        """score / length^alpha; length counts the EOS of finished hypotheses."""
        length = max(len(self.tokens), 1)
        return self.score / length**alpha

    def to_result(self) -> DecodeResult:
        if self.finished:
            return DecodeResult(self.tokens[:-1], False, self.score)
        return DecodeResult(list(self.tokens), True, self.score)


@dataclass
class Beam:
    """Live and finished hypotheses of one fixed-width search."""
    width: int
    alpha: float
    limit: int
    active: list[Hypothesis] = field(default_factory=lambda: [Hypothesis([], 0.0)])
    finished: list[Hypothesis] = field(default_factory=list)

    def best_finished(self) -> float:
        return max((h.normalized(self.alpha) for h in self.finished), default=-np.inf)

    @property
    def done(self) -> bool:
        """No live hypothesis left, or none of them can still beat the best finished one.

        Log-probabilities only fall as a hypothesis grows, so a live hypothesis
        ends at most at score / limit^alpha.
        """
        if not self.active:
            return True
        if len(self.finished) < self.width:
            return False
        bound = max(h.score / self.limit**self.alpha for h in self.active)
        return self.best_finished() >= bound

    def ranked(self, include_active: bool = False) -> list[Hypothesis]:
        """Best normalized score first; live hypotheses join only once they hit the step limit."""
        pool = self.finished + (self.active if include_active else [])
        return sorted(pool, key=lambda h: -h.normalized(self.alpha))


def token_log_probs(logits: np.ndarray) -> np.ndarray:
    """log_softmax in float64 over the generatable tokens; blocked ids get -inf."""
    x = np.array(logits, dtype=np.float64)
    x[..., list(BLOCKED_IDS)] = -np.inf
    shifted = x - x.max(axis=-1, keepdims=True)
    with np.errstate(divide="ignore"):
        return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def _resolve_steps(model: TransformerModel, max_steps: int | None) -> int:
    limit = model.config.max_len
    steps = limit - 1 if max_steps is None else max_steps
    if not 1 <= steps <= limit:
        raise ContractError(f"max_steps must be in [1, {limit}], got {steps}")
    return steps


def encode_source(model: TransformerModel, source_ids: Sequence[int] | np.ndarray) -> EncoderStates:
    """Encoder states of one source sequence (no dropout)."""
    return encode(model, np.asarray(source_ids, dtype=np.int64)[None, :])


def greedy_decode(
    model: TransformerModel,
    source_ids: Sequence[int] | np.ndarray,
    max_steps: int | None = None,
) -> DecodeResult:
    """Argmax decoding; stops at EOS or after max_steps tokens (truncated)."""
    steps = _resolve_steps(model, max_steps)
    enc = encode_source(model, source_ids)
    tokens: list[int] = []
    score = 0.0
    cache: DecoderCache | None = None
    for _ in range(steps):
        prefix = np.array([[BOS_ID, *tokens]], dtype=np.int64)
        logits, cache = decode_step(model, enc, prefix, cache)
        totals = score + token_log_probs(logits.data[0])
        token = int(np.argmax(totals))
        score = float(totals[token])
        if token == EOS_ID:
            return DecodeResult(tokens, False, score)
        tokens.append(token)
    logger.debug(f"greedy decode truncated after {steps} steps")
    return DecodeResult(tokens, True, score)


def _beam_pass(
    model: TransformerModel, enc: EncoderStates, width: int, alpha: float, steps: int
) -> Hypothesis:
    """One search at a fixed width; returns its best hypothesis."""
    beam = Beam(width, alpha, steps)
    cache: DecoderCache | None = None
    exhausted = True

    for _ in range(steps):
        count = len(beam.active)
        prefix = np.array([[BOS_ID, *h.tokens] for h in beam.active], dtype=np.int64)
        logits, cache = decode_step(model, enc.select(np.zeros(count, dtype=np.int64)), prefix, cache)
        scores = (np.array([h.score for h in beam.active])[:, None] + token_log_probs(logits.data)).reshape(-1)

        vocab = logits.shape[-1]
        parents = np.repeat(np.arange(count), vocab)
        token_ids = np.tile(np.arange(vocab), count)
        order = [i for i in np.lexsort((token_ids, parents, -scores)) if np.isfinite(scores[i])][:width]

        survivors = []
        for flat in order:
            parent, token = int(parents[flat]), int(token_ids[flat])
            hyp = Hypothesis(beam.active[parent].tokens + [token], float(scores[flat]))
            if token == EOS_ID:
                hyp.finished = True
                beam.finished.append(hyp)
            else:
                survivors.append((parent, hyp))
        beam.active = [h for _, h in survivors]
        if beam.done:
            exhausted = len(beam.active) > 0 and len(beam.active[0].tokens) == steps
            break
        cache = cache.select(np.array([p for p, _ in survivors], dtype=np.int64))

    return beam.ranked(include_active=exhausted)[0]


def beam_search(
    model: TransformerModel,
    source_ids: Sequence[int] | np.ndarray,
    k: int = 4,
    alpha: float = 0.6,
    max_steps: int | None = None,
) -> DecodeResult:
    """Beam search ranked by log-probability / length^alpha.

    Each pass keeps the `width` best candidates by raw log-probability and
    retires those ending in EOS; it stops once no live hypothesis can beat
    the best finished one. Hypotheses still live at max_steps compete as
    truncated results. The answer for k is the best over every width 1..k,
    so widening the beam never lowers the normalized score.
    """
    if k < 1:
        raise ContractError(f"beam size must be >= 1, got {k}")
    steps = _resolve_steps(model, max_steps)
    enc = encode_source(model, source_ids)

    best: Hypothesis | None = None
    for width in range(1, k + 1):
        hyp = _beam_pass(model, enc, width, alpha, steps)
        if best is None or hyp.normalized(alpha) > best.normalized(alpha):
            best = hyp
    assert best is not None
    if not best.finished:
        logger.debug(f"beam search truncated after {steps} steps")
    return best.to_result()


def decode_ids(
    model: TransformerModel,
    source_ids: Sequence[int] | np.ndarray,
    beam_size: int = 1,
    alpha: float = 0.6,
    max_steps: int | None = None,
) -> DecodeResult:
    """Greedy for beam_size 1, beam search otherwise."""
    if beam_size == 1:
        return greedy_decode(model, source_ids, max_steps)
    return beam_search(model, source_ids, beam_size, alpha, max_steps)
