"""Paired ablation runs: identical data, seeds and step budget per variant."""

from collections.abc import Sequence
from dataclasses import dataclass, field
from typing import Any

from pbd.config import DecodeConfig, ModelConfig, RunConfig
from pbd.errors import ConfigError, DataError
from pbd.inference.metrics import EvalReport, evaluate
from pbd.model import count_params, init_model
from pbd.training.trainer import Trainer, load_training_data, resolve_vocab
from pbd.utils.logging import get_logger

logger = get_logger(__name__)

_BASELINE = {"use_pbd": False, "use_segment": False, "share_params": False}


@dataclass(frozen=True)
class Variant:
    """Flag overrides plus a depth multiplier applied to the base model."""
    flags: dict[str, bool] = field(default_factory=dict)
    depth: int = 1


# The *_deep rows double n_layers: a shared deep model stores about as many
# floats as an unshared shallow one.
VARIANTS: dict[str, Variant] = {
    "pbd": Variant(),
    "no_future": Variant({"use_pbd": False}),
    "no_sharing": Variant({"share_params": False}),
    "transformer": Variant(_BASELINE),
    "pbd_deep": Variant(depth=2),
    "transformer_deep": Variant(_BASELINE, depth=2),
}


def variant_config(base: ModelConfig, name: str) -> ModelConfig:
    """Model config of a named variant."""
    if name not in VARIANTS:
        raise ConfigError(f"unknown variant {name!r}; choose from {sorted(VARIANTS)}")
    variant = VARIANTS[name]
    return base.model_copy(update={**variant.flags, "n_layers": base.n_layers * variant.depth})


@dataclass
class VariantResult:
    name: str
    params: int
    layers: int
    final_loss: float
    greedy: EvalReport
    beam: EvalReport

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "params": self.params,
            "layers": self.layers,
            "final_loss": self.final_loss,
            "greedy": self.greedy.to_dict(),
            "beam": self.beam.to_dict(),
        }


@dataclass
class Comparison:
    beam_size: int
    results: list[VariantResult] = field(default_factory=list)

    def table(self) -> list[list[str]]:
        """Header plus one row per variant."""
        rows = [["variant", "layers", "params", "final_loss", "greedy_em", "greedy_cer",
                 f"beam{self.beam_size}_em", f"beam{self.beam_size}_cer"]]
        for r in self.results:
            rows.append([
                r.name, str(r.layers), str(r.params), f"{r.final_loss:.4f}",
                f"{r.greedy.exact_match:.4f}", f"{r.greedy.cer:.4f}",
                f"{r.beam.exact_match:.4f}", f"{r.beam.cer:.4f}",
            ])
        return rows


def compare_variants(
    config: RunConfig,
    variants: Sequence[str] = tuple(VARIANTS),
    beam_size: int = 4,
) -> Comparison:
    """Train every variant from the same seeds and score it on the held-out data."""
    unknown = [v for v in variants if v not in VARIANTS]
    if unknown:
        raise ConfigError(f"unknown variants {unknown}; choose from {sorted(VARIANTS)}")
    train, heldout = load_training_data(config)
    if not heldout:
        raise DataError("comparison needs held-out data (valid_path or holdout_fraction > 0)")
    base, vocab = resolve_vocab(config.model, train + heldout)

    comparison = Comparison(beam_size)
    for name in variants:
        model_config = variant_config(base, name)
        model = init_model(model_config, config.training.init_seed)
        logger.info(f"Training variant {name} ({count_params(model)[0]} parameters)")
        result = Trainer(model, vocab, train, config.training).run()
        greedy = evaluate(model, vocab, heldout, config.decode.model_copy(update={"beam_size": 1}))
        beam = evaluate(
            model, vocab, heldout,
            DecodeConfig(beam_size=beam_size, length_alpha=config.decode.length_alpha,
                         max_steps=config.decode.max_steps),
        )
        comparison.results.append(
            VariantResult(
                name, count_params(model)[0], model_config.n_layers, result.final_loss, greedy, beam
            )
        )
    return comparison
