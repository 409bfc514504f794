"""Error hierarchy for PBD.

Every error raised by the library derives from PBDError. Standard Python
bases are mixed in so callers can catch either family.
"""


class PBDError(Exception):
    """Base class for all PBD errors."""


class ConfigError(PBDError, ValueError):
    """Invalid configuration value or document."""


class ConfigMismatchError(ConfigError):
    """A stored artifact does not match the requested configuration."""


class CorpusNotFoundError(ConfigError, FileNotFoundError):
    """A configured data path does not exist."""

    def __init__(self, path: object) -> None:
        super().__init__(f"corpus not found: {path}")
        self.path = path


class ContractError(PBDError, ValueError):
    """A pre- or post-condition of an operation was violated."""


class DimensionError(ContractError):
    """Tensor shapes are incompatible for an operation."""


class IndexRangeError(ContractError, IndexError):
    """An index lies outside the valid range."""


class LengthError(ContractError):
    """A sequence is longer than the model's max_len."""


class DataError(PBDError, ValueError):
    """Malformed or unusable data."""


class VocabMismatchError(DataError):
    """Data or checkpoint vocabulary is incompatible with the model."""


class TrainingError(PBDError, RuntimeError):
    """Training cannot continue (e.g. a non-finite gradient)."""


class CheckpointFormatError(PBDError, ValueError):
    """A checkpoint file is truncated, corrupted or of an unknown version."""
