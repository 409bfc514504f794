"""PBD configuration management.

Run configurations are nested pydantic models stored as a single JSON or
YAML document. Unknown keys and dotted keys are rejected.
"""

import json
from pathlib import Path
from typing import Any, Literal

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from pbd.errors import ConfigError

DEFAULT_ALPHABET = "abcdefghijklmnopqrstuvwxyz"


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ModelConfig(_Section):
    """Transformer hyperparameters and ablation flags."""
    model_config = ConfigDict(extra="forbid", frozen=True)

    vocab_size: int | None = None  # None = derive from the training corpus
    d_model: int = Field(default=64, gt=0)
    n_heads: int = Field(default=4, gt=0)
    n_layers: int = Field(default=6, gt=0)
    d_ff: int = Field(default=256, gt=0)
    max_len: int = Field(default=64, gt=1)
    dropout_rate: float = Field(default=0.1, ge=0.0, lt=1.0)

    # Ablations: use_pbd=False is "without future modeling",
    # share_params=False is "without parameter sharing".
    use_pbd: bool = True
    use_segment: bool = True
    share_params: bool = True
    tie_output_embedding: bool = True

    positional: Literal["learned", "sinusoidal"] = "learned"
    activation: Literal["relu", "gelu"] = "relu"
    copy_source: Literal["layer_input", "layer_output"] = "layer_input"
    copy_offset: Literal[0, 1] = 1
    segment_per_layer: bool = False
    precision: Literal["float32", "float64"] = "float32"
    layer_norm_eps: float = Field(default=1e-5, gt=0.0)

    def check(self) -> None:
        """Raise ConfigError unless the configuration can build a model."""
        if self.vocab_size is None or self.vocab_size < 5:
            raise ConfigError(f"vocab_size must be set and >= 5 (got {self.vocab_size})")
        if self.d_model % self.n_heads != 0:
            raise ConfigError(
                f"d_model ({self.d_model}) must be divisible by n_heads ({self.n_heads})"
            )

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads


class TrainingConfig(_Section):
    """Optimization hyperparameters."""
    steps: int = Field(default=2000, ge=0)
    batch_size: int = Field(default=32, ge=1)
    warmup: int = Field(default=400, ge=1)
    lr_scale: float = Field(default=1.0, gt=0.0)
    beta1: float = 0.9
    beta2: float = 0.98
    adam_eps: float = 1e-9
    label_smoothing: float = Field(default=0.1, ge=0.0, lt=1.0)
    clip_norm: float = Field(default=1.0, ge=0.0)  # 0 disables clipping
    init_seed: int = 0
    data_seed: int = 0
    checkpoint_every: int = Field(default=500, ge=0)  # 0 = final checkpoint only
    log_every: int = Field(default=50, ge=1)


class DataConfig(_Section):
    """Corpus locations and output paths."""
    train_path: Path | None = None
    valid_path: Path | None = None
    holdout_fraction: float = Field(default=0.1, ge=0.0, lt=1.0)
    lowercase: bool = False
    checkpoint_dir: Path | None = None  # None = no checkpoint files
    loss_log: Path | None = None  # None = loss lines on stdout


class DecodeConfig(_Section):
    """Search settings used by eval, decode and compare."""
    beam_size: int = Field(default=1, ge=1)
    length_alpha: float = Field(default=0.6, ge=0.0)
    max_steps: int | None = None  # None = max_len - 1


class CorruptionConfig(_Section):
    """Per-character edit probabilities for the synthetic noise generator."""
    p_sub: float = Field(default=0.05, ge=0.0, le=1.0)
    p_del: float = Field(default=0.04, ge=0.0, le=1.0)
    p_ins: float = Field(default=0.04, ge=0.0, le=1.0)
    p_swap: float = Field(default=0.02, ge=0.0, le=1.0)
    alphabet: str = DEFAULT_ALPHABET
    seed: int = 0

    @model_validator(mode="after")
    def _total_probability(self) -> "CorruptionConfig":
        if self.total > 1.0 + 1e-12:
            raise ValueError(f"edit probabilities sum to {self.total} > 1")
        if not self.alphabet:
            raise ValueError("alphabet must not be empty")
        return self

    @property
    def total(self) -> float:
        return self.p_sub + self.p_del + self.p_ins + self.p_swap


class RunConfig(_Section):
    """Main run configuration: one document per experiment."""
    model: ModelConfig = Field(default_factory=ModelConfig)
    training: TrainingConfig = Field(default_factory=TrainingConfig)
    data: DataConfig = Field(default_factory=DataConfig)
    decode: DecodeConfig = Field(default_factory=DecodeConfig)


class RuntimeSettings(BaseSettings):
    """Process-level settings read from PBD_* environment variables."""
    model_config = SettingsConfigDict(env_prefix="PBD_")

    log_level: str = "INFO"
    log_file: Path | None = None
    precision: Literal["float32", "float64"] | None = None


def get_default_config() -> RunConfig:
    """Default run: a 2-layer PBD model on a character corpus."""
    return RunConfig(
        model=ModelConfig(n_layers=2, max_len=32),
        data=DataConfig(train_path=Path("data/train.tsv")),
    )


def _reject_dotted_keys(data: Any, where: str = "") -> None:
    if isinstance(data, dict):
        for key, value in data.items():
            if "." in str(key):
                raise ConfigError(f"dotted keys are not allowed: {where}{key}")
            _reject_dotted_keys(value, f"{where}{key}/")


def parse_config(data: dict[str, Any] | None) -> RunConfig:
    """Validate a raw config document."""
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("config document must be a mapping")
    _reject_dotted_keys(data)
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        loc = "/".join(str(p) for p in first["loc"])
        raise ConfigError(f"invalid config at {loc}: {first['msg']}") from e


def load_config(config_path: Path) -> RunConfig:
    """Load a run configuration from a JSON or YAML file."""
    if not config_path.exists():
        raise ConfigError(f"config file not found: {config_path}")
    with open(config_path, encoding="utf-8") as f:
        try:
            data = yaml.safe_load(f)
        except yaml.YAMLError as e:
            raise ConfigError(f"cannot parse {config_path}: {e}") from e
    return parse_config(data)


def dump_config(config: RunConfig, fmt: Literal["json", "yaml"] = "json") -> str:
    """Serialize a run configuration."""
    data = config.model_dump(mode="json")
    if fmt == "json":
        return json.dumps(data, indent=2) + "\n"
    return yaml.safe_dump(data, default_flow_style=False, sort_keys=False)


def save_config(config: RunConfig, config_path: Path) -> None:
    """Save configuration; JSON for .json paths, YAML otherwise."""
    config_path.parent.mkdir(parents=True, exist_ok=True)
    fmt: Literal["json", "yaml"] = "json" if config_path.suffix == ".json" else "yaml"
    config_path.write_text(dump_config(config, fmt), encoding="utf-8")
