"""Transformer encoder-decoder with pseudo-bidirectional decoding.

Pre-norm blocks (norm -> sublayer -> residual add). In decoder layer l the
self-attention keys/values are the copied encoder representations of the
source followed by the decoder's own states, and the pseudo-bidirectional
mask restricts query i to target 1..i and source i+offset..n. A learned
segment embedding marks copied (row 1) versus generated (row 0) rows.

With share_params the decoder's self-attention, feed-forward and their
norms are the encoder's tensors (same objects); cross-attention is always
decoder-owned.
"""

import math
from collections.abc import Iterator
from dataclasses import dataclass, field

import numpy as np

from pbd.attention import (
    AttentionMask,
    MultiHeadParams,
    build_causal_mask,
    build_padding_mask,
    build_pbd_mask,
    concat_key_masks,
    multi_head_attention,
)
from pbd.config import ModelConfig
from pbd.data.vocab import BOS_ID
from pbd.errors import ConfigMismatchError, ContractError, LengthError
from pbd.tensor import ops
from pbd.tensor.core import DTYPES, Tensor
from pbd.utils.logging import get_logger

logger = get_logger(__name__)

# Sub-blocks that encoder and decoder layers share under share_params.
SHARED_BLOCKS = ("norm1", "self_attn", "norm2", "ffn")
_ATTN = ("w_q", "w_k", "w_v", "w_o")
_NORM = ("gain", "bias")
_FFN = ("w1", "b1", "w2", "b2")


def _block_shapes(prefix: str, block: str, cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    d, f = cfg.d_model, cfg.d_ff
    if block in ("self_attn", "cross_attn"):
        return {f"{prefix}.{block}.{w}": (d, d) for w in _ATTN}
    if block == "ffn":
        return {
            f"{prefix}.ffn.w1": (d, f), f"{prefix}.ffn.b1": (f,),
            f"{prefix}.ffn.w2": (f, d), f"{prefix}.ffn.b2": (d,),
        }
    return {f"{prefix}.{block}.{w}": (d,) for w in _NORM}


def parameter_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Every logical parameter name and its shape, in initialization order."""
    cfg.check()
    d, vocab = cfg.d_model, cfg.vocab_size
    assert vocab is not None
    shapes: dict[str, tuple[int, ...]] = {"embed.tokens": (vocab, d)}
    if cfg.positional == "learned":
        shapes["embed.positions"] = (cfg.max_len, d)
    if cfg.use_segment and not cfg.segment_per_layer:
        shapes["segment"] = (2, d)
    for layer in range(cfg.n_layers):
        for block in SHARED_BLOCKS:
            shapes.update(_block_shapes(f"encoder.{layer}", block, cfg))
    shapes["encoder.norm.gain"] = (d,)
    shapes["encoder.norm.bias"] = (d,)
    for layer in range(cfg.n_layers):
        prefix = f"decoder.{layer}"
        for block in ("norm1", "self_attn", "norm_cross", "cross_attn", "norm2", "ffn"):
            shapes.update(_block_shapes(prefix, block, cfg))
        if cfg.use_segment and cfg.segment_per_layer:
            shapes[f"{prefix}.segment"] = (2, d)
    shapes["decoder.norm.gain"] = (d,)
    shapes["decoder.norm.bias"] = (d,)
    if not cfg.tie_output_embedding:
        shapes["output.weight"] = (d, vocab)
    return shapes


def sharing_map(cfg: ModelConfig) -> dict[str, str]:
    """Logical decoder names that resolve to encoder storage."""
    if not cfg.share_params:
        return {}
    aliases = {}
    for name in parameter_shapes(cfg):
        parts = name.split(".")
        if parts[0] == "decoder" and parts[1].isdigit() and parts[2] in SHARED_BLOCKS:
            aliases[name] = ".".join(["encoder", *parts[1:]])
    return aliases


def storage_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    aliases = sharing_map(cfg)
    return {k: v for k, v in parameter_shapes(cfg).items() if k not in aliases}


def sinusoidal_table(max_len: int, d_model: int) -> np.ndarray:
    position = np.arange(max_len)[:, None]
    rate = np.exp(-math.log(10000.0) * (np.arange(0, d_model, 2) / d_model))
    table = np.zeros((max_len, d_model))
    table[:, 0::2] = np.sin(position * rate)
    table[:, 1::2] = np.cos(position * rate[: d_model // 2])
    return table


class TransformerModel:
    """Named parameter collection plus the sharing map that resolves aliases."""

    def __init__(
        self,
        config: ModelConfig,
        parameters: dict[str, Tensor],
        aliases: dict[str, str] | None = None,
    ) -> None:
        self.config = config
        self.parameters = parameters
        self.aliases = sharing_map(config) if aliases is None else aliases
        self.dtype = DTYPES[config.precision]
        self.position_table = (
            sinusoidal_table(config.max_len, config.d_model).astype(self.dtype)
            if config.positional == "sinusoidal" else None
        )

    def param(self, name: str) -> Tensor:
        return self.parameters[self.aliases.get(name, name)]

    def named_parameters(self) -> Iterator[tuple[str, Tensor]]:
        """Storage tensors (each shared tensor once)."""
        yield from self.parameters.items()

    def attention(self, prefix: str) -> MultiHeadParams:
        return MultiHeadParams(
            *(self.param(f"{prefix}.{w}") for w in _ATTN), n_heads=self.config.n_heads
        )

    def segment_table(self, layer: int) -> Tensor:
        if self.config.segment_per_layer:
            return self.param(f"decoder.{layer}.segment")
        return self.param("segment")

    def with_config(self, **updates: object) -> "TransformerModel":
        """View of the same storage under different runtime flags (ablation toggles)."""
        new_cfg = self.config.model_copy(update=updates)
        missing = set(storage_shapes(new_cfg)) - set(self.parameters)
        if missing or sharing_map(new_cfg) != self.aliases:
            raise ConfigMismatchError(
                f"flags {sorted(updates)} change the parameter layout (missing: {sorted(missing)[:3]})"
            )
        return TransformerModel(new_cfg, self.parameters, self.aliases)

    @classmethod
    def from_state(cls, config: ModelConfig, tensors: dict[str, np.ndarray]) -> "TransformerModel":
        """Build a model from stored tensors, which must match the config's layout."""
        expected = storage_shapes(config)
        if set(tensors) != set(expected):
            extra = sorted(set(tensors) - set(expected))
            missing = sorted(set(expected) - set(tensors))
            raise ConfigMismatchError(
                f"stored parameters do not match config (share_params={config.share_params}): "
                f"unexpected {extra[:3]}, missing {missing[:3]}"
            )
        dtype = DTYPES[config.precision]
        params = {}
        for name, shape in expected.items():
            arr = tensors[name]
            if tuple(arr.shape) != shape:
                raise ConfigMismatchError(f"{name}: stored shape {arr.shape}, expected {shape}")
            params[name] = Tensor(arr, requires_grad=True, name=name, dtype=dtype)
        return cls(config, params)


def init_model(config: ModelConfig, seed: int = 0) -> TransformerModel:
    """Deterministically initialize a model from (config, seed)."""
    config.check()
    rng = np.random.default_rng(seed)
    dtype = DTYPES[config.precision]
    params: dict[str, Tensor] = {}
    for name, shape in storage_shapes(config).items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf == "gain":
            values = np.ones(shape)
        elif leaf in ("bias", "b1", "b2"):
            values = np.zeros(shape)
        elif name == "embed.tokens":
            values = rng.normal(0.0, config.d_model**-0.5, shape)
        elif name == "embed.positions":
            values = rng.normal(0.0, 1.0, shape)
        elif leaf == "segment":
            values = rng.normal(0.0, 0.1, shape)
        else:
            limit = math.sqrt(6.0 / (shape[0] + shape[1]))
            values = rng.uniform(-limit, limit, shape)
        params[name] = Tensor(values, requires_grad=True, name=name, dtype=dtype)
    model = TransformerModel(config, params)
    logger.debug(f"Initialized model with {count_params(model)[0]} parameters (seed={seed})")
    return model


def count_params(model: TransformerModel) -> tuple[int, dict[str, int]]:
    """Exact number of stored floats; shared tensors count once."""
    breakdown = {name: t.size for name, t in model.named_parameters()}
    return sum(breakdown.values()), breakdown


@dataclass
class EncoderStates:
    """Per-layer encoder outputs: states[0] is the embedded input, states[l] the output of layer l."""
    states: list[Tensor]
    memory: Tensor  # final-normed top state, attended by cross-attention
    lengths: np.ndarray

    def __len__(self) -> int:
        return len(self.states)

    def __getitem__(self, layer: int) -> Tensor:
        return self.states[layer]

    @property
    def batch_size(self) -> int:
        return int(self.memory.shape[0])

    @property
    def source_len(self) -> int:
        return int(self.memory.shape[1])

    def padding_mask(self) -> AttentionMask:
        return build_padding_mask(self.lengths, self.source_len)

    def select(self, indices: np.ndarray) -> "EncoderStates":
        """Rows picked along the batch axis (inference only; detached)."""
        return EncoderStates(
            [Tensor(s.data[indices]) for s in self.states],
            Tensor(self.memory.data[indices]),
            self.lengths[indices],
        )


@dataclass
class DecoderCache:
    """Normalized self-attention rows of already decoded positions, per decoder layer."""
    layers: list[np.ndarray] = field(default_factory=list)

    @property
    def length(self) -> int:
        return int(self.layers[0].shape[1]) if self.layers else 0

    def select(self, indices: np.ndarray) -> "DecoderCache":
        return DecoderCache([rows[indices] for rows in self.layers])


def _as_batch(ids: np.ndarray | list[int] | list[list[int]]) -> tuple[np.ndarray, bool]:
    arr = np.asarray(ids, dtype=np.int64)
    if arr.ndim == 1:
        return arr[None, :], True
    if arr.ndim != 2:
        raise ContractError(f"ids must be [L] or [B, L], got shape {arr.shape}")
    return arr, False


def _norm(model: TransformerModel, prefix: str, x: Tensor) -> Tensor:
    return ops.layer_norm(
        x, model.param(f"{prefix}.gain"), model.param(f"{prefix}.bias"), model.config.layer_norm_eps
    )


def _feed_forward(model: TransformerModel, prefix: str, x: Tensor) -> Tensor:
    hidden = ops.matmul(x, model.param(f"{prefix}.w1")) + model.param(f"{prefix}.b1")
    hidden = ops.gelu(hidden) if model.config.activation == "gelu" else ops.relu(hidden)
    return ops.matmul(hidden, model.param(f"{prefix}.w2")) + model.param(f"{prefix}.b2")


def _embed(
    model: TransformerModel, ids: np.ndarray, start: int, rng: np.random.Generator | None
) -> Tensor:
    cfg = model.config
    length = ids.shape[1]
    if start + length > cfg.max_len:
        raise LengthError(f"sequence of length {start + length} exceeds max_len {cfg.max_len}")
    tokens = ops.scale(ops.embedding_lookup(model.param("embed.tokens"), ids), math.sqrt(cfg.d_model))
    positions = np.arange(start, start + length)
    if model.position_table is not None:
        pos = Tensor(model.position_table[positions])
    else:
        pos = ops.embedding_lookup(model.param("embed.positions"), positions)
    return ops.dropout(tokens + pos, cfg.dropout_rate, rng)


def _segment_row(model: TransformerModel, layer: int, row: int) -> Tensor:
    return ops.index_select(model.segment_table(layer), [row])


def _logits(model: TransformerModel, h: Tensor) -> Tensor:
    h = _norm(model, "decoder.norm", h)
    if model.config.tie_output_embedding:
        weight = ops.swap_last(model.param("embed.tokens"))
    else:
        weight = model.param("output.weight")
    return ops.matmul(h, weight)


def _copied_states(model: TransformerModel, enc: EncoderStates, layer: int) -> Tensor:
    index = layer if model.config.copy_source == "layer_input" else layer + 1
    return enc.states[index]


def encode(
    model: TransformerModel,
    source_ids: np.ndarray | list[int] | list[list[int]],
    lengths: np.ndarray | list[int] | None = None,
    rng: np.random.Generator | None = None,
) -> EncoderStates:
    """Run the encoder, keeping all L+1 per-layer states.

    source_ids is [n] or [B, n]; lengths marks padded batches. Passing an
    rng enables dropout.
    """
    ids, _ = _as_batch(source_ids)
    batch, n = ids.shape
    if n < 1:
        raise ContractError("source must contain at least one token")
    lens = np.full(batch, n, dtype=np.int64) if lengths is None else np.asarray(lengths, np.int64)
    pad = build_padding_mask(lens, n)
    rate = model.config.dropout_rate

    h = _embed(model, ids, 0, rng)
    states = [h]
    for layer in range(model.config.n_layers):
        prefix = f"encoder.{layer}"
        a = _norm(model, f"{prefix}.norm1", h)
        h = h + ops.dropout(multi_head_attention(a, a, model.attention(f"{prefix}.self_attn"), pad), rate, rng)
        f = _norm(model, f"{prefix}.norm2", h)
        h = h + ops.dropout(_feed_forward(model, f"{prefix}.ffn", f), rate, rng)
        states.append(h)
    memory = _norm(model, "encoder.norm", h)
    return EncoderStates(states, memory, lens)


def _check_bos(ids: np.ndarray) -> None:
    if ids.shape[1] < 1 or (ids[:, 0] != BOS_ID).any():
        raise ContractError("decoder input must begin with BOS")


def decode_parallel(
    model: TransformerModel,
    encoder_states: EncoderStates,
    target_input_ids: np.ndarray | list[int] | list[list[int]],
    target_lengths: np.ndarray | list[int] | None = None,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Teacher-forced decoder pass; logits [m, V] (or [B, m, V] for batches)."""
    cfg = model.config
    ids, single = _as_batch(target_input_ids)
    _check_bos(ids)
    batch, m = ids.shape
    enc = encoder_states
    if enc.batch_size != batch:
        raise ContractError(f"encoder batch {enc.batch_size} != decoder batch {batch}")
    n = enc.source_len
    lens = np.full(batch, m, dtype=np.int64) if target_lengths is None else np.asarray(target_lengths, np.int64)
    tgt_pad = build_padding_mask(lens, m)
    src_pad = enc.padding_mask()
    if cfg.use_pbd:
        self_mask = build_pbd_mask(n, m, cfg.copy_offset) & concat_key_masks([src_pad, tgt_pad])
    else:
        self_mask = build_causal_mask(m) & tgt_pad
    rate = cfg.dropout_rate

    h = _embed(model, ids, 0, rng)
    for layer in range(cfg.n_layers):
        prefix = f"decoder.{layer}"
        generated = h + _segment_row(model, layer, 0) if cfg.use_segment else h
        if cfg.use_pbd:
            copied = _copied_states(model, enc, layer)
            if cfg.use_segment:
                copied = copied + _segment_row(model, layer, 1)
            kv = _norm(model, f"{prefix}.norm1", ops.concat([copied, generated], axis=1))
            q = ops.slice_axis(kv, 1, n)
        else:
            kv = q = _norm(model, f"{prefix}.norm1", generated)
        attn = multi_head_attention(q, kv, model.attention(f"{prefix}.self_attn"), self_mask)
        h = h + ops.dropout(attn, rate, rng)
        c = _norm(model, f"{prefix}.norm_cross", h)
        cross = multi_head_attention(c, enc.memory, model.attention(f"{prefix}.cross_attn"), src_pad)
        h = h + ops.dropout(cross, rate, rng)
        f = _norm(model, f"{prefix}.norm2", h)
        h = h + ops.dropout(_feed_forward(model, f"{prefix}.ffn", f), rate, rng)

    logits = _logits(model, h)
    return ops.reshape(logits, logits.shape[1:]) if single else logits


def decode_step(
    model: TransformerModel,
    encoder_states: EncoderStates,
    prefix_ids: np.ndarray | list[int] | list[list[int]],
    cache: DecoderCache | None = None,
) -> tuple[Tensor, DecoderCache]:
    """Logits for output position t given the prefix [BOS, y_1..y_{t-1}].

    The cache holds positions 1..t-1; the copy region at step t is source
    positions t+offset..n of each layer's copied encoder states (empty once
    t+offset > n, which reduces the step to causal decoding).
    """
    cfg = model.config
    ids, single = _as_batch(prefix_ids)
    _check_bos(ids)
    batch, t = ids.shape
    enc = encoder_states
    if enc.batch_size != batch:
        raise ContractError(f"encoder batch {enc.batch_size} != prefix batch {batch}")
    cache = cache or DecoderCache()
    if cache.length != t - 1:
        raise ContractError(f"cache holds {cache.length} positions but the prefix needs {t - 1}")

    n = enc.source_len
    start = t - 1 + cfg.copy_offset  # 0-based index of source position t + offset
    own = AttentionMask(np.ones((batch, 1, t), dtype=bool))
    new_layers = []

    h = _embed(model, ids[:, t - 1:t], t - 1, None)
    for layer in range(cfg.n_layers):
        prefix = f"decoder.{layer}"
        generated = h + _segment_row(model, layer, 0) if cfg.use_segment else h
        row = _norm(model, f"{prefix}.norm1", generated)
        rows = row if cache.length == 0 else ops.concat([Tensor(cache.layers[layer]), row], axis=1)
        new_layers.append(rows.data)
        keys, mask = [rows], own
        if cfg.use_pbd and start < n:
            copied = ops.slice_axis(_copied_states(model, enc, layer), 1, start)
            if cfg.use_segment:
                copied = copied + _segment_row(model, layer, 1)
            keys = [_norm(model, f"{prefix}.norm1", copied), rows]
            region = AttentionMask(enc.padding_mask().allowed[..., start:])
            mask = concat_key_masks([region, own])
        h = h + multi_head_attention(row, keys, model.attention(f"{prefix}.self_attn"), mask)
        c = _norm(model, f"{prefix}.norm_cross", h)
        h = h + multi_head_attention(c, enc.memory, model.attention(f"{prefix}.cross_attn"), enc.padding_mask())
        f = _norm(model, f"{prefix}.norm2", h)
        h = h + _feed_forward(model, f"{prefix}.ffn", f)

    logits = _logits(model, h)
    logits = ops.reshape(logits, (batch, logits.shape[-1]))
    if single:
        logits = ops.reshape(logits, (logits.shape[-1],))
    return logits, DecoderCache(new_layers)
