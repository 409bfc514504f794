"""Teacher-forced training loop."""

import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from pbd.config import ModelConfig, RunConfig, TrainingConfig
from pbd.data.corpus import Batch, Example, load_tsv, make_batches, split_holdout
from pbd.data.vocab import PAD_ID, Vocab, build_vocab
from pbd.errors import ConfigError, DataError, VocabMismatchError
from pbd.model import TransformerModel, decode_parallel, encode, init_model
from pbd.tensor.core import Tape, Tensor, backward
from pbd.training.checkpoint import load_checkpoint, save_checkpoint
from pbd.training.loss import cross_entropy_loss
from pbd.training.optim import OptimState, adam_step, clip_grad_norm, lr_schedule
from pbd.utils.hashing import fingerprint
from pbd.utils.logging import get_logger

logger = get_logger(__name__)


def batch_loss(
    model: TransformerModel,
    batch: Batch,
    label_smoothing: float = 0.0,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Forward pass of a batch to the scalar loss tensor (records onto the active tape)."""
    enc = encode(model, batch.source_ids, batch.source_lengths, rng)
    logits = decode_parallel(model, enc, batch.target_input_ids, batch.target_lengths, rng)
    return cross_entropy_loss(logits, batch.target_output_ids, PAD_ID, label_smoothing)


def compute_gradients(
    model: TransformerModel,
    batch: Batch,
    label_smoothing: float = 0.0,
    rng: np.random.Generator | None = None,
) -> tuple[float, dict[str, np.ndarray]]:
    """Loss value and gradients keyed by storage name.

    A shared tensor appears once; its gradient is the sum over all of its uses.
    """
    with Tape() as tape:
        loss = batch_loss(model, batch, label_smoothing, rng)
    grads = backward(loss, tape)
    return loss.item(), {name: grads[p] for name, p in model.named_parameters()}


def train_step(
    model: TransformerModel,
    batch: Batch,
    optim: OptimState,
    clip_norm: float,
    lr: float,
    label_smoothing: float = 0.0,
    rng: np.random.Generator | None = None,
) -> float:
    """forward -> loss -> backward -> clip -> Adam. Returns the pre-update loss."""
    loss, grads = compute_gradients(model, batch, label_smoothing, rng)
    grads, norm = clip_grad_norm(grads, clip_norm)
    adam_step(model.parameters, grads, optim, lr)
    logger.debug(f"step {optim.step}: loss={loss:.5f} grad_norm={norm:.4f} lr={lr:.3e}")
    return loss


def dropout_rng(init_seed: int, step: int) -> np.random.Generator:
    """Dropout stream for one step, independent of how training was resumed."""
    return np.random.default_rng([init_seed, step])


@dataclass
class TrainingResult:
    steps: int
    losses: list[float] = field(default_factory=list)
    checkpoints: list[Path] = field(default_factory=list)
    heldout: dict[str, float | int] | None = None

    @property
    def final_loss(self) -> float:
        return self.losses[-1] if self.losses else math.nan

    def to_dict(self) -> dict[str, Any]:
        return {
            "steps": self.steps,
            "final_loss": self.final_loss,
            "checkpoints": [str(p) for p in self.checkpoints],
            "heldout": self.heldout,
        }


class Trainer:
    """Runs optimizer steps over a fixed training set.

    Batches for epoch e are make_batches(examples, seed=data_seed + e), so
    global step s always sees the same batch, including after a resume.
    """

    def __init__(
        self,
        model: TransformerModel,
        vocab: Vocab,
        examples: Sequence[Example],
        training: TrainingConfig,
        optim: OptimState | None = None,
        on_log: Callable[[str], None] | None = None,
    ) -> None:
        if not examples:
            raise DataError("training set is empty")
        self.model = model
        self.vocab = vocab
        self.examples = list(examples)
        self.training = training
        self.optim = optim or OptimState.for_parameters(
            model.parameters, training.beta1, training.beta2, training.adam_eps
        )
        self.on_log = on_log
        self.batches_per_epoch = math.ceil(len(self.examples) / training.batch_size)
        self._epoch: int | None = None
        self._batches: list[Batch] = []

    @property
    def step(self) -> int:
        return self.optim.step

    def batch_for_step(self, step: int) -> Batch:
        epoch, index = divmod(step - 1, self.batches_per_epoch)
        if epoch != self._epoch:
            self._batches = make_batches(
                self.examples, self.vocab, self.training.batch_size,
                self.training.data_seed + epoch, self.model.config.max_len,
            )
            self._epoch = epoch
        return self._batches[index]

    def learning_rate(self, step: int) -> float:
        return lr_schedule(step, self.model.config.d_model, self.training.warmup, self.training.lr_scale)

    def run(self, steps: int | None = None, checkpoint_dir: Path | None = None) -> TrainingResult:
        """Train until the optimizer has taken `steps` steps in total."""
        cfg = self.training
        target = cfg.steps if steps is None else steps
        result = TrainingResult(steps=self.step)
        dropout_on = self.model.config.dropout_rate > 0

        while self.step < target:
            step = self.step + 1
            lr = self.learning_rate(step)
            rng = dropout_rng(cfg.init_seed, step) if dropout_on else None
            loss = train_step(
                self.model, self.batch_for_step(step), self.optim,
                cfg.clip_norm, lr, cfg.label_smoothing, rng,
            )
            result.losses.append(loss)
            result.steps = step
            if self.on_log is not None:
                self.on_log(f"{step}\t{loss:.8g}\t{lr:.8g}")
            if step % cfg.log_every == 0:
                logger.info(f"step {step}/{target} loss {loss:.4f} lr {lr:.2e}")
            if checkpoint_dir is not None and cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
                result.checkpoints.append(self.save(checkpoint_dir / f"step_{step:06d}.pbdc"))

        if checkpoint_dir is not None:
            result.checkpoints.append(self.save(checkpoint_dir / "last.pbdc"))
        return result

    def save(self, path: Path) -> Path:
        return save_checkpoint(
            path, self.model, self.vocab, self.optim,
            {"step": self.step, "training": self.training.model_dump(mode="json")},
        )


def load_training_data(config: RunConfig) -> tuple[list[Example], list[Example]]:
    """Training examples and held-out examples (valid_path, or a split of train_path)."""
    data = config.data
    if data.train_path is None:
        raise ConfigError("data.train_path is not set")
    examples = load_tsv(data.train_path, data.lowercase)
    if not examples:
        raise DataError(f"{data.train_path}: no examples")
    if data.valid_path is not None:
        return examples, load_tsv(data.valid_path, data.lowercase)
    if data.holdout_fraction > 0:
        return split_holdout(examples, data.holdout_fraction, config.training.data_seed)
    return examples, []


def resolve_vocab(config: ModelConfig, examples: Sequence[Example]) -> tuple[ModelConfig, Vocab]:
    """Vocabulary of the corpus; fills vocab_size or checks it against the corpus."""
    vocab = build_vocab(text for ex in examples for text in (ex.source, ex.target))
    if config.vocab_size is None:
        config = config.model_copy(update={"vocab_size": len(vocab)})
    elif config.vocab_size != len(vocab):
        raise VocabMismatchError(
            f"model.vocab_size is {config.vocab_size} but the corpus needs {len(vocab)} symbols"
        )
    return config, vocab


def train_from_config(
    config: RunConfig,
    resume: Path | None = None,
    on_log: Callable[[str], None] | None = None,
    steps: int | None = None,
) -> TrainingResult:
    """Full training run: data, model (fresh or resumed), checkpoints, held-out score."""
    from pbd.inference.metrics import evaluate

    train, heldout = load_training_data(config)
    if resume is not None:
        ckpt = load_checkpoint(resume)
        model, vocab, optim = ckpt.model, ckpt.vocab, ckpt.optim
        unknown = vocab.unknown_characters(t for ex in train for t in (ex.source, ex.target))
        if unknown:
            raise VocabMismatchError(f"corpus has characters missing from the checkpoint: {sorted(unknown)}")
    else:
        model_config, vocab = resolve_vocab(config.model, train + heldout)
        model = init_model(model_config, config.training.init_seed)
        optim = None

    run_id = fingerprint(config.model_dump(mode="json"))
    logger.info(f"Training run {run_id}: {len(train)} examples, {len(heldout)} held out")
    trainer = Trainer(model, vocab, train, config.training, optim, on_log)
    result = trainer.run(steps, config.data.checkpoint_dir)

    if heldout:
        report = evaluate(model, vocab, heldout, config.decode)
        result.heldout = report.to_dict()
        logger.info(f"Held-out exact match {report.exact_match:.4f}, CER {report.cer:.4f}")
    return result
