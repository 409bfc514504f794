"""Full-model finite-difference gradient check."""

from dataclasses import dataclass

import numpy as np

from pbd.config import ModelConfig
from pbd.data.corpus import Batch
from pbd.data.vocab import BOS_ID, EOS_ID
from pbd.model import init_model
from pbd.tensor.core import precision
from pbd.tensor.gradcheck import GradientCheck, check_gradients
from pbd.training.trainer import batch_loss
from pbd.utils.logging import get_logger

logger = get_logger(__name__)

TINY_CONFIG = ModelConfig(
    vocab_size=7, d_model=8, n_heads=2, n_layers=2, d_ff=16, max_len=8,
    dropout_rate=0.0, activation="gelu", precision="float64",
)


@dataclass
class GradcheckShape:
    batch_size: int = 1
    source_len: int = 4
    target_len: int = 3


def gradcheck_config(base: ModelConfig | None = None) -> ModelConfig:
    """The tiny default, or a given config forced to float64 without dropout."""
    if base is None:
        return TINY_CONFIG
    return base.model_copy(update={"precision": "float64", "dropout_rate": 0.0})


def random_batch(config: ModelConfig, shape: GradcheckShape, rng: np.random.Generator) -> Batch:
    """Random ids over the non-special symbols; EOS-terminated source, BOS-prefixed target."""
    assert config.vocab_size is not None
    low = EOS_ID + 1
    src = rng.integers(low, config.vocab_size, size=(shape.batch_size, shape.source_len))
    src[:, -1] = EOS_ID
    out = rng.integers(low, config.vocab_size, size=(shape.batch_size, shape.target_len))
    out[:, -1] = EOS_ID
    inp = np.concatenate([np.full((shape.batch_size, 1), BOS_ID), out[:, :-1]], axis=1)
    return Batch(
        src, inp, out,
        np.full(shape.batch_size, shape.source_len),
        np.full(shape.batch_size, shape.target_len),
    )


def run_model_gradcheck(
    config: ModelConfig | None = None,
    seed: int = 0,
    shape: GradcheckShape | None = None,
    label_smoothing: float = 0.1,
    tolerance: float = 1e-4,
) -> GradientCheck:
    """Compare tape gradients of the training loss with central differences.

    Every stored parameter tensor is checked once; shared tensors therefore
    cover both their encoder and decoder uses.
    """
    config = gradcheck_config(config)
    shape = shape or GradcheckShape()
    with precision("float64"):
        model = init_model(config, seed)
        batch = random_batch(config, shape, np.random.default_rng(seed))
        result = check_gradients(
            lambda: batch_loss(model, batch, label_smoothing),
            dict(model.named_parameters()),
            tolerance=tolerance,
        )
    logger.info(f"Gradient check worst relative error {result.worst:.3e} over {len(result.errors)} tensors")
    return result
