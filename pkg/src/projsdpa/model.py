"""Toy encoder-decoder transformer built on either attention variant.

Blocks are pre-norm (layer norm before each sublayer) with residual bypass
around every sublayer. The encoder is unmasked; decoder self-attention is
causal; decoder cross-attention reads the final encoder states. Forward
functions return caches, and :func:`backward` walks them in reverse,
accumulating into each :class:`Parameter`.

Token ids 0..3 are reserved: pad, start, end, unk.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterator

import numpy as np

from .attention import AttentionConfig, AttentionParams, MHACache, Variant, mha_backward, mha_forward, xavier_uniform
from .numerics import (
    LayerNormCache,
    Parameter,
    RngState,
    ShapeError,
    embedding_backward,
    layer_norm_rows,
    layer_norm_rows_backward,
    linear,
    linear_backward,
    relu,
    relu_backward,
)

PAD_ID, START_ID, END_ID, UNK_ID = 0, 1, 2, 3
NUM_RESERVED = 4

CHECKPOINT_FORMAT = "projsdpa-checkpoint"
CHECKPOINT_VERSION = 1


class ConfigError(ValueError):
    """Inconsistent model or run configuration."""


class DataError(ValueError):
    """Token ids or sequences outside what the model accepts."""


@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 128
    num_heads: int = 8
    num_encoder_layers: int = 2
    num_decoder_layers: int = 2
    ff_dim: int = 512
    src_vocab: int = 15000
    tgt_vocab: int = 15000
    max_len: int = 10
    variant: Variant = Variant.STANDARD
    sigma2_self: float = 0.01
    sigma2_cross: float = 0.05
    normalize_rows: bool = False
    seed: int = 0
    ln_eps: float = 1e-5
    # Standard variant only; None means 1/sqrt(head_dim).
    attention_scale: float | None = None
    learn_sigma2: bool = False

    def __post_init__(self):
        try:
            object.__setattr__(self, "variant", Variant(self.variant))
        except ValueError as exc:
            raise ConfigError(f"unknown attention variant {self.variant!r}") from exc
        if self.d_model < 2 or self.num_heads < 1 or self.d_model % self.num_heads:
            raise ConfigError(f"d_model={self.d_model} must be divisible by num_heads={self.num_heads}")
        if self.d_model % 2:
            raise ConfigError("d_model must be even for the sinusoidal position table")
        if self.max_len < 1:
            raise ConfigError("max_len must be >= 1")
        if min(self.src_vocab, self.tgt_vocab) < NUM_RESERVED:
            raise ConfigError("vocabulary sizes must be >= 4 (pad/start/end/unk are reserved)")
        if self.num_encoder_layers < 0 or self.num_decoder_layers < 0 or self.ff_dim < 1:
            raise ConfigError("layer counts must be >= 0 and ff_dim >= 1")
        if not (self.sigma2_self > 0 and self.sigma2_cross > 0):
            raise ConfigError("sigma2 values must be positive")
        if self.attention_scale is not None and not self.attention_scale > 0:
            raise ConfigError("attention_scale must be positive")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.num_heads

    def attention(self, kind: str) -> AttentionConfig:
        """Attention settings for ``kind`` in {"enc_self", "dec_self", "dec_cross"}."""
        sigma2 = self.sigma2_cross if kind == "dec_cross" else self.sigma2_self
        return AttentionConfig(
            variant=self.variant,
            num_heads=self.num_heads,
            head_dim=self.head_dim,
            sigma2=sigma2,
            causal=kind == "dec_self",
            normalize_rows=self.normalize_rows,
            scale=self.attention_scale,
            learn_sigma2=self.learn_sigma2,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["variant"] = self.variant.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


def parameter_count(config: ModelConfig) -> int:
    """Closed-form number of scalar parameters.

    attention set:  3·d² (projection: W_q, W_k, W_out) or 4·d² (standard adds W_v),
                    +1 per set when sigma2 is learned (projection only)
    feed-forward:   2·d·ff + ff + d
    layer norm:     2·d per norm
    encoder layer:  attn + ffn + 2 norms;   decoder layer: 2 attn + ffn + 3 norms
    plus embeddings (src_vocab + tgt_vocab)·d, two final norms, and the
    output map d·tgt_vocab + tgt_vocab.
    """
    d, ff = config.d_model, config.ff_dim
    n_mats = 4 if config.variant is Variant.STANDARD else 3
    attn = n_mats * d * d + (1 if config.learn_sigma2 else 0)
    ffn = 2 * d * ff + ff + d
    ln = 2 * d
    enc = config.num_encoder_layers * (attn + ffn + 2 * ln)
    dec = config.num_decoder_layers * (2 * attn + ffn + 3 * ln)
    emb = (config.src_vocab + config.tgt_vocab) * d
    out = d * config.tgt_vocab + config.tgt_vocab
    return emb + enc + dec + 2 * ln + out


def positional_encoding(max_len: int, d_model: int) -> np.ndarray:
    """Sinusoidal table: ``sin`` on even columns, ``cos`` on odd columns.

    Column pair ``(2i, 2i+1)`` uses angular frequency ``10000^(−2i/d_model)``,
    i.e. wavelengths from 2π up to 10⁴·2π.
    """
    if d_model % 2:
        raise ConfigError(f"positional_encoding needs an even d_model, got {d_model}")
    pos = np.arange(max_len, dtype=np.float64)[:, None]
    freq = np.exp(-math.log(10000.0) * np.arange(0, d_model, 2, dtype=np.float64) / d_model)
    table = np.zeros((max_len, d_model))
    table[:, 0::2] = np.sin(pos * freq)
    table[:, 1::2] = np.cos(pos * freq)
    return table


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------


@dataclass
class LayerNormParams:
    gain: Parameter
    bias: Parameter

    @classmethod
    def init(cls, d: int) -> "LayerNormParams":
        return cls(Parameter(np.ones(d)), Parameter(np.zeros(d)))


@dataclass
class FeedForwardParams:
    W1: Parameter
    b1: Parameter
    W2: Parameter
    b2: Parameter

    @classmethod
    def init(cls, d: int, ff: int, rng: RngState) -> "FeedForwardParams":
        return cls(
            Parameter(xavier_uniform(rng, d, ff)),
            Parameter(np.zeros(ff)),
            Parameter(xavier_uniform(rng, ff, d)),
            Parameter(np.zeros(d)),
        )


@dataclass
class EncoderLayerParams:
    ln1: LayerNormParams
    self_attn: AttentionParams
    ln2: LayerNormParams
    ffn: FeedForwardParams


@dataclass
class DecoderLayerParams:
    ln1: LayerNormParams
    self_attn: AttentionParams
    ln2: LayerNormParams
    cross_attn: AttentionParams
    ln3: LayerNormParams
    ffn: FeedForwardParams


@dataclass
class TransformerParams:
    src_embed: Parameter
    tgt_embed: Parameter
    encoder: list[EncoderLayerParams]
    decoder: list[DecoderLayerParams]
    enc_norm: LayerNormParams
    dec_norm: LayerNormParams
    out_W: Parameter
    out_b: Parameter

    @classmethod
    def init(cls, config: ModelConfig) -> "TransformerParams":
        rng = RngState(config.seed)
        d = config.d_model
        src_embed = Parameter(xavier_uniform(rng, config.src_vocab, d))
        tgt_embed = Parameter(xavier_uniform(rng, config.tgt_vocab, d))
        encoder = [
            EncoderLayerParams(
                LayerNormParams.init(d),
                AttentionParams.init(config.attention("enc_self"), d, rng),
                LayerNormParams.init(d),
                FeedForwardParams.init(d, config.ff_dim, rng),
            )
            for _ in range(config.num_encoder_layers)
        ]
        decoder = [
            DecoderLayerParams(
                LayerNormParams.init(d),
                AttentionParams.init(config.attention("dec_self"), d, rng),
                LayerNormParams.init(d),
                AttentionParams.init(config.attention("dec_cross"), d, rng),
                LayerNormParams.init(d),
                FeedForwardParams.init(d, config.ff_dim, rng),
            )
            for _ in range(config.num_decoder_layers)
        ]
        return cls(
            src_embed,
            tgt_embed,
            encoder,
            decoder,
            LayerNormParams.init(d),
            LayerNormParams.init(d),
            Parameter(xavier_uniform(rng, d, config.tgt_vocab)),
            Parameter(np.zeros(config.tgt_vocab)),
        )

    def named_parameters(self) -> Iterator[tuple[str, Parameter]]:
        yield "src_embed", self.src_embed
        yield "tgt_embed", self.tgt_embed
        for i, layer in enumerate(self.encoder):
            p = f"encoder.{i}"
            yield from _named_ln(f"{p}.ln1", layer.ln1)
            for n, par in layer.self_attn.named_parameters():
                yield f"{p}.self_attn.{n}", par
            yield from _named_ln(f"{p}.ln2", layer.ln2)
            yield from _named_ffn(f"{p}.ffn", layer.ffn)
        for i, layer in enumerate(self.decoder):
            p = f"decoder.{i}"
            yield from _named_ln(f"{p}.ln1", layer.ln1)
            for n, par in layer.self_attn.named_parameters():
                yield f"{p}.self_attn.{n}", par
            yield from _named_ln(f"{p}.ln2", layer.ln2)
            for n, par in layer.cross_attn.named_parameters():
                yield f"{p}.cross_attn.{n}", par
            yield from _named_ln(f"{p}.ln3", layer.ln3)
            yield from _named_ffn(f"{p}.ffn", layer.ffn)
        yield from _named_ln("enc_norm", self.enc_norm)
        yield from _named_ln("dec_norm", self.dec_norm)
        yield "out_W", self.out_W
        yield "out_b", self.out_b

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def zero_grads(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def num_parameters(self) -> int:
        return sum(p.value.size for p in self.parameters())


def _named_ln(prefix: str, ln: LayerNormParams):
    yield f"{prefix}.gain", ln.gain
    yield f"{prefix}.bias", ln.bias


def _named_ffn(prefix: str, ffn: FeedForwardParams):
    yield f"{prefix}.W1", ffn.W1
    yield f"{prefix}.b1", ffn.b1
    yield f"{prefix}.W2", ffn.W2
    yield f"{prefix}.b2", ffn.b2


# ---------------------------------------------------------------------------
# blocks
# ---------------------------------------------------------------------------


@dataclass
class FFNCache:
    x: np.ndarray
    pre: np.ndarray
    act: np.ndarray


def _ffn_forward(x: np.ndarray, p: FeedForwardParams) -> tuple[np.ndarray, FFNCache]:
    pre = linear(x, p.W1.value, p.b1.value)
    act = relu(pre)
    return linear(act, p.W2.value, p.b2.value), FFNCache(x, pre, act)


def _ffn_backward(grad: np.ndarray, c: FFNCache, p: FeedForwardParams) -> np.ndarray:
    dact, dw2, db2 = linear_backward(grad, c.act, p.W2.value)
    p.W2.accumulate(dw2)
    p.b2.accumulate(db2)
    dpre = relu_backward(dact, c.pre)
    dx, dw1, db1 = linear_backward(dpre, c.x, p.W1.value)
    p.W1.accumulate(dw1)
    p.b1.accumulate(db1)
    return dx


def _ln_forward(x, p: LayerNormParams, eps: float):
    return layer_norm_rows(x, p.gain.value, p.bias.value, eps)


def _ln_backward(grad, cache: LayerNormCache, p: LayerNormParams) -> np.ndarray:
    dx, dg, db = layer_norm_rows_backward(grad, cache)
    p.gain.accumulate(dg)
    p.bias.accumulate(db)
    return dx


@dataclass
class EncoderBlockCache:
    ln1: LayerNormCache
    attn: MHACache
    ln2: LayerNormCache
    ffn: FFNCache


@dataclass
class DecoderBlockCache:
    ln1: LayerNormCache
    self_attn: MHACache
    ln2: LayerNormCache
    cross_attn: MHACache
    ln3: LayerNormCache
    ffn: FFNCache


def encoder_block_forward(
    x: np.ndarray, p: EncoderLayerParams, config: ModelConfig
) -> tuple[np.ndarray, EncoderBlockCache]:
    h, c1 = _ln_forward(x, p.ln1, config.ln_eps)
    a, ca = mha_forward(h, h, p.self_attn, config.attention("enc_self"))
    x = x + a
    h, c2 = _ln_forward(x, p.ln2, config.ln_eps)
    f, cf = _ffn_forward(h, p.ffn)
    return x + f, EncoderBlockCache(c1, ca, c2, cf)


def encoder_block(x: np.ndarray, p: EncoderLayerParams, config: ModelConfig) -> np.ndarray:
    """``x + SelfAttn(LN(x))``, then ``+ FFN(LN(·))``; no masking."""
    return encoder_block_forward(x, p, config)[0]


def encoder_block_backward(
    grad: np.ndarray, c: EncoderBlockCache, p: EncoderLayerParams, config: ModelConfig
) -> np.ndarray:
    dh = _ffn_backward(grad, c.ffn, p.ffn)
    grad = grad + _ln_backward(dh, c.ln2, p.ln2)
    dq, dkv = mha_backward(grad, c.attn, p.self_attn, config.attention("enc_self"))
    return grad + _ln_backward(dq + dkv, c.ln1, p.ln1)


def decoder_block_forward(
    y: np.ndarray, memory: np.ndarray, p: DecoderLayerParams, config: ModelConfig
) -> tuple[np.ndarray, DecoderBlockCache]:
    h, c1 = _ln_forward(y, p.ln1, config.ln_eps)
    a, cs = mha_forward(h, h, p.self_attn, config.attention("dec_self"))
    y = y + a
    h, c2 = _ln_forward(y, p.ln2, config.ln_eps)
    a, cc = mha_forward(h, memory, p.cross_attn, config.attention("dec_cross"))
    y = y + a
    h, c3 = _ln_forward(y, p.ln3, config.ln_eps)
    f, cf = _ffn_forward(h, p.ffn)
    return y + f, DecoderBlockCache(c1, cs, c2, cc, c3, cf)


def decoder_block(
    y: np.ndarray, memory: np.ndarray, p: DecoderLayerParams, config: ModelConfig
) -> np.ndarray:
    """Causal self-attention, cross-attention over ``memory``, then FFN; all pre-norm residual."""
    return decoder_block_forward(y, memory, p, config)[0]


def decoder_block_backward(
    grad: np.ndarray, c: DecoderBlockCache, p: DecoderLayerParams, config: ModelConfig
) -> tuple[np.ndarray, np.ndarray]:
    """Returns ``(d_y, d_memory)``."""
    dh = _ffn_backward(grad, c.ffn, p.ffn)
    grad = grad + _ln_backward(dh, c.ln3, p.ln3)
    dq, dmem = mha_backward(grad, c.cross_attn, p.cross_attn, config.attention("dec_cross"))
    grad = grad + _ln_backward(dq, c.ln2, p.ln2)
    dq, dkv = mha_backward(grad, c.self_attn, p.self_attn, config.attention("dec_self"))
    return grad + _ln_backward(dq + dkv, c.ln1, p.ln1), dmem


# ---------------------------------------------------------------------------
# whole model
# ---------------------------------------------------------------------------


@dataclass
class ForwardCache:
    src_ids: np.ndarray
    tgt_ids: np.ndarray
    enc: list[EncoderBlockCache] = field(default_factory=list)
    enc_norm: LayerNormCache | None = None
    dec: list[DecoderBlockCache] = field(default_factory=list)
    dec_norm: LayerNormCache | None = None
    dec_out: np.ndarray | None = None
    memory: np.ndarray | None = None


_PE_CACHE: dict[tuple[int, int], np.ndarray] = {}


def _pe(max_len: int, d_model: int) -> np.ndarray:
    key = (max_len, d_model)
    if key not in _PE_CACHE:
        _PE_CACHE[key] = positional_encoding(max_len, d_model)
    return _PE_CACHE[key]


def _check_ids(ids: np.ndarray, vocab: int, max_len: int, what: str) -> np.ndarray:
    ids = np.asarray(ids)
    if ids.ndim not in (1, 2):
        raise DataError(f"{what} ids must be a sequence or a batch of sequences")
    if not np.issubdtype(ids.dtype, np.integer):
        raise DataError(f"{what} ids must be integers")
    if ids.shape[-1] < 1 or ids.shape[-1] > max_len:
        raise DataError(f"{what} length {ids.shape[-1]} outside 1..{max_len}")
    if ids.size and (ids.min() < 0 or ids.max() >= vocab):
        raise DataError(f"{what} id out of range for vocabulary of size {vocab}")
    return ids


def _embed(ids: np.ndarray, table: np.ndarray, config: ModelConfig) -> np.ndarray:
    return table[ids] * math.sqrt(config.d_model) + _pe(config.max_len, config.d_model)[: ids.shape[-1]]


def encode(
    src_ids: np.ndarray, params: TransformerParams, config: ModelConfig, cache: ForwardCache | None = None
) -> np.ndarray:
    """Run the encoder stack; returns the normalized memory."""
    x = _embed(src_ids, params.src_embed.value, config)
    for layer in params.encoder:
        x, c = encoder_block_forward(x, layer, config)
        if cache is not None:
            cache.enc.append(c)
    memory, cn = _ln_forward(x, params.enc_norm, config.ln_eps)
    if cache is not None:
        cache.enc_norm = cn
        cache.memory = memory
    return memory


def decode(
    tgt_ids: np.ndarray,
    memory: np.ndarray,
    params: TransformerParams,
    config: ModelConfig,
    cache: ForwardCache | None = None,
) -> np.ndarray:
    """Run the decoder stack and the output map; returns logits."""
    y = _embed(tgt_ids, params.tgt_embed.value, config)
    for layer in params.decoder:
        y, c = decoder_block_forward(y, memory, layer, config)
        if cache is not None:
            cache.dec.append(c)
    h, cn = _ln_forward(y, params.dec_norm, config.ln_eps)
    if cache is not None:
        cache.dec_norm = cn
        cache.dec_out = h
    return linear(h, params.out_W.value, params.out_b.value)


def forward_with_cache(
    src_ids, tgt_ids, params: TransformerParams, config: ModelConfig
) -> tuple[np.ndarray, ForwardCache]:
    src_ids = _check_ids(src_ids, config.src_vocab, config.max_len, "source")
    tgt_ids = _check_ids(tgt_ids, config.tgt_vocab, config.max_len, "target")
    if src_ids.ndim != tgt_ids.ndim or (src_ids.ndim == 2 and src_ids.shape[0] != tgt_ids.shape[0]):
        raise DataError(f"source batch {src_ids.shape} and target batch {tgt_ids.shape} disagree")
    cache = ForwardCache(src_ids, tgt_ids)
    memory = encode(src_ids, params, config, cache)
    return decode(tgt_ids, memory, params, config, cache), cache


def forward(src_ids, tgt_ids, params: TransformerParams, config: ModelConfig) -> np.ndarray:
    """Pre-softmax logits, shape ``[T, tgt_vocab]`` (or ``[B, T, tgt_vocab]`` for batches)."""
    return forward_with_cache(src_ids, tgt_ids, params, config)[0]


def backward(grad_logits: np.ndarray, cache: ForwardCache, params: TransformerParams, config: ModelConfig) -> None:
    """Accumulate ``dLoss/dparam`` into every parameter's ``grad``."""
    if grad_logits.shape[:-1] != cache.tgt_ids.shape or grad_logits.shape[-1] != config.tgt_vocab:
        raise ShapeError(f"logit gradient shape {grad_logits.shape} does not match the forward pass")
    dh, dw, db = linear_backward(grad_logits, cache.dec_out, params.out_W.value)
    params.out_W.accumulate(dw)
    params.out_b.accumulate(db)
    dy = _ln_backward(dh, cache.dec_norm, params.dec_norm)
    dmem = np.zeros_like(cache.memory)
    for layer, c in zip(reversed(params.decoder), reversed(cache.dec)):
        dy, dm = decoder_block_backward(dy, c, layer, config)
        dmem += dm
    scale = math.sqrt(config.d_model)
    params.tgt_embed.accumulate(embedding_backward(dy * scale, cache.tgt_ids, config.tgt_vocab))
    dx = _ln_backward(dmem, cache.enc_norm, params.enc_norm)
    for layer, c in zip(reversed(params.encoder), reversed(cache.enc)):
        dx = encoder_block_backward(dx, c, layer, config)
    params.src_embed.accumulate(embedding_backward(dx * scale, cache.src_ids, config.src_vocab))


def greedy_decode(
    src_ids, params: TransformerParams, config: ModelConfig, max_steps: int | None = None
) -> list[int]:
    """Argmax decoding from the start token; the start and end tokens are not returned."""
    src_ids = _check_ids(src_ids, config.src_vocab, config.max_len, "source")
    memory = encode(src_ids, params, config)
    limit = config.max_len if max_steps is None else min(max_steps, config.max_len)
    tgt = [START_ID]
    out: list[int] = []
    while len(out) < limit:
        logits = decode(np.array(tgt), memory, params, config)
        nxt = int(np.argmax(logits[-1]))
        if nxt == END_ID:
            break
        out.append(nxt)
        tgt.append(nxt)
    return out


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(path, params: TransformerParams, config: ModelConfig, extra: dict | None = None) -> None:
    """Write config, metadata and every parameter array to a ``.npz`` container."""
    meta = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": config.to_dict(),
        "extra": extra or {},
    }
    arrays = {f"param:{name}": p.value for name, p in params.named_parameters()}
    buf = io.BytesIO()
    np.savez(buf, __meta__=np.array(json.dumps(meta, sort_keys=True)), **arrays)
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path) -> tuple[TransformerParams, ModelConfig, dict]:
    """Inverse of :func:`save_checkpoint`; returns ``(params, config, extra)``."""
    with np.load(path, allow_pickle=False) as z:
        if "__meta__" not in z:
            raise ConfigError(f"{path}: not a checkpoint (missing metadata)")
        meta = json.loads(str(z["__meta__"]))
        if meta.get("format") != CHECKPOINT_FORMAT or meta.get("version") != CHECKPOINT_VERSION:
            raise ConfigError(f"{path}: unsupported checkpoint format {meta.get('format')} v{meta.get('version')}")
        config = ModelConfig.from_dict(meta["config"])
        params = TransformerParams.init(config)
        expected = dict(params.named_parameters())
        stored = {k[len("param:"):] for k in z.files if k.startswith("param:")}
        if stored != set(expected):
            raise ConfigError(f"{path}: parameter set does not match its config")
        for name, p in expected.items():
            arr = z[f"param:{name}"]
            if arr.shape != p.shape:
                raise ConfigError(f"{path}: {name} has shape {arr.shape}, config implies {p.shape}")
            p.value = np.array(arr, dtype=np.float64)
            p.zero_grad()
    return params, config, meta.get("extra", {})
