"""Versioned binary checkpoints.

Layout (little-endian):

    b"PBDC" | u32 version | u32 header_len | header (UTF-8 JSON) | u32 tensor_count
    then per tensor: u32 name_len | name | 3-byte dtype tag ("<f4"/"<f8")
                     | u32 ndim | u32 dims... | raw values

The header holds the model config, vocabulary symbols, the sharing map,
optimizer hyperparameters and free-form metadata. Shared parameters are
stored once under their storage name.
"""

import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
from pydantic import ValidationError

from pbd.config import ModelConfig
from pbd.data.vocab import Vocab
from pbd.errors import CheckpointFormatError, ConfigMismatchError, DataError
from pbd.model import TransformerModel, sharing_map
from pbd.training.optim import OptimState
from pbd.utils.logging import get_logger

logger = get_logger(__name__)

MAGIC = b"PBDC"
VERSION = 1
_DTYPE_TAGS = {np.dtype("<f4"): b"<f4", np.dtype("<f8"): b"<f8"}
_PARAM = "param/"
_MOMENT1 = "adam.m/"
_MOMENT2 = "adam.v/"


@dataclass
class Checkpoint:
    model: TransformerModel
    vocab: Vocab
    optim: OptimState | None = None
    metadata: dict[str, Any] = field(default_factory=dict)


def _pack_tensor(name: str, arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr)
    le = arr.dtype.newbyteorder("<")
    if le not in _DTYPE_TAGS:
        raise CheckpointFormatError(f"cannot store dtype {arr.dtype} for {name}")
    encoded = name.encode("utf-8")
    parts = [
        struct.pack("<I", len(encoded)), encoded, _DTYPE_TAGS[le],
        struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape),
        arr.astype(le, copy=False).tobytes(),
    ]
    return b"".join(parts)


def save_checkpoint(
    path: Path,
    model: TransformerModel,
    vocab: Vocab,
    optim: OptimState | None = None,
    metadata: dict[str, Any] | None = None,
) -> Path:
    """Write a checkpoint atomically (temp file + rename)."""
    path = Path(path)
    header = {
        "model_config": model.config.model_dump(mode="json"),
        "vocab": list(vocab.symbols),
        "aliases": model.aliases,
        "optim": optim.meta() if optim is not None else None,
        "metadata": metadata or {},
    }
    tensors = [(f"{_PARAM}{name}", t.data) for name, t in model.named_parameters()]
    if optim is not None:
        tensors += [(f"{_MOMENT1}{name}", arr) for name, arr in optim.m.items()]
        tensors += [(f"{_MOMENT2}{name}", arr) for name, arr in optim.v.items()]

    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    chunks = [
        MAGIC, struct.pack("<II", VERSION, len(header_bytes)), header_bytes,
        struct.pack("<I", len(tensors)),
    ]
    chunks += [_pack_tensor(name, arr) for name, arr in tensors]

    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(b"".join(chunks))
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise
    logger.info(f"Saved checkpoint {path} ({len(tensors)} tensors)")
    return path


class _Reader:
    def __init__(self, data: bytes, path: Path) -> None:
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, size: int) -> bytes:
        if self.pos + size > len(self.data):
            raise CheckpointFormatError(f"{self.path}: truncated at byte {self.pos}")
        chunk = self.data[self.pos : self.pos + size]
        self.pos += size
        return chunk

    def u32(self) -> int:
        return int(struct.unpack("<I", self.take(4))[0])


def _read_tensors(reader: _Reader) -> dict[str, np.ndarray]:
    tensors = {}
    for _ in range(reader.u32()):
        name = reader.take(reader.u32()).decode("utf-8")
        tag = reader.take(3)
        dtype = next((dt for dt, t in _DTYPE_TAGS.items() if t == tag), None)
        if dtype is None:
            raise CheckpointFormatError(f"{reader.path}: unknown dtype tag {tag!r} for {name}")
        shape = tuple(reader.u32() for _ in range(reader.u32()))
        count = int(np.prod(shape, dtype=np.int64))
        raw = reader.take(count * dtype.itemsize)
        tensors[name] = np.frombuffer(raw, dtype=dtype).reshape(shape).copy()
    if reader.pos != len(reader.data):
        raise CheckpointFormatError(f"{reader.path}: {len(reader.data) - reader.pos} trailing bytes")
    return tensors


def load_checkpoint(path: Path, config: ModelConfig | None = None) -> Checkpoint:
    """Read a checkpoint; a config, when given, must describe the stored layout.

    Raises:
        CheckpointFormatError: bad magic, unknown version, truncation or corruption.
        ConfigMismatchError: config does not match the stored parameters.
    """
    path = Path(path)
    reader = _Reader(path.read_bytes(), path)
    if reader.take(4) != MAGIC:
        raise CheckpointFormatError(f"{path}: not a PBD checkpoint (bad magic)")
    version = reader.u32()
    if version != VERSION:
        raise CheckpointFormatError(f"{path}: unsupported checkpoint version {version}")
    try:
        header = json.loads(reader.take(reader.u32()).decode("utf-8"))
        stored_config = ModelConfig.model_validate(header["model_config"])
        vocab = Vocab(tuple(header["vocab"]))
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, ValidationError, DataError) as e:
        raise CheckpointFormatError(f"{path}: corrupted header ({e})") from e
    tensors = _read_tensors(reader)

    if config is None:
        config = stored_config
    elif config.vocab_size is None:
        config = config.model_copy(update={"vocab_size": stored_config.vocab_size})
    if config.vocab_size != len(vocab):
        raise ConfigMismatchError(
            f"config vocab_size {config.vocab_size} but checkpoint vocabulary has {len(vocab)} symbols"
        )
    if header.get("aliases", {}) != sharing_map(stored_config):
        raise CheckpointFormatError(f"{path}: sharing map does not match the stored config")

    params = {k[len(_PARAM):]: v for k, v in tensors.items() if k.startswith(_PARAM)}
    model = TransformerModel.from_state(config, params)

    optim = None
    if header.get("optim") is not None:
        meta = header["optim"]
        optim = OptimState(
            meta["beta1"], meta["beta2"], meta["eps"], int(meta["step"]),
            {k[len(_MOMENT1):]: v for k, v in tensors.items() if k.startswith(_MOMENT1)},
            {k[len(_MOMENT2):]: v for k, v in tensors.items() if k.startswith(_MOMENT2)},
        )
        if set(optim.m) != set(params) or set(optim.v) != set(params):
            raise CheckpointFormatError(f"{path}: optimizer moments do not cover the parameters")

    logger.info(f"Loaded checkpoint {path} (step {header.get('metadata', {}).get('step', '?')})")
    return Checkpoint(model, vocab, optim, header.get("metadata", {}))
