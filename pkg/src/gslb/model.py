"""The three networks: guided summarizer, corrector seq2seq, consistency classifier.

The guided summarizer has two encoders sharing the token embeddings and the
bottom ``shared_bottom_layers`` encoder layers; the top layers are duplicated
per encoder. Each decoder layer runs self-attention, then cross-attention
over the guidance representations, then cross-attention over the document
representations, then the feed-forward block, each followed by layer
normalization. The corrector is the same decoder with the guidance path
removed over a single encoder. Output logits are tied to the token embedding
matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .corpus import BOS_ID, EOS_ID, PAD_ID, SEP_ID
from .params import (
    ParameterSet,
    embedding_init,
    ones_init,
    uniform_init,
    zeros_init,
)

ACTIVATIONS = ("relu", "gelu")
INCORRECT_INDEX, CORRECT_INDEX = 0, 1


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    layers: int = 2
    shared_bottom_layers: int = 1
    model_dim: int = 64
    heads: int = 4
    ffn_dim: int = 256
    max_len: int = 128
    vocab_size: int = 0
    activation: str = "relu"
    float_width: int = 32

    def __post_init__(self) -> None:
        if not 0 <= self.shared_bottom_layers <= self.layers:
            raise ModelError("shared_bottom_layers must be between 0 and layers")
        if self.model_dim % self.heads != 0:
            raise ModelError("model_dim must be divisible by heads")
        if self.activation not in ACTIVATIONS:
            raise ModelError(f"activation must be one of {ACTIVATIONS}")
        if self.float_width not in (32, 64):
            raise ModelError("float_width must be 32 or 64")
        if self.vocab_size < 5:
            raise ModelError("vocab_size must cover the reserved tokens")

    @property
    def dtype(self):
        return np.float64 if self.float_width == 64 else np.float32

    def to_dict(self) -> dict:
        return {
            "layers": self.layers,
            "shared_bottom_layers": self.shared_bottom_layers,
            "model_dim": self.model_dim,
            "heads": self.heads,
            "ffn_dim": self.ffn_dim,
            "max_len": self.max_len,
            "vocab_size": self.vocab_size,
            "activation": self.activation,
            "float_width": self.float_width,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "ModelConfig":
        return cls(**obj)


@dataclass
class EncoderOutput:
    doc: ad.Tensor
    doc_mask: np.ndarray
    gui: ad.Tensor | None = None
    gui_mask: np.ndarray | None = None


def _add_attention(params: ParameterSet, prefix: str, cfg: ModelConfig, rng) -> None:
    d = cfg.model_dim
    for name in ("wq", "wk", "wv", "wo"):
        params.add(f"{prefix}.{name}", uniform_init(rng, (d, d), cfg.dtype))
    for name in ("bq", "bk", "bv", "bo"):
        params.add(f"{prefix}.{name}", zeros_init((d,), cfg.dtype))


def _add_layer_norm(params: ParameterSet, prefix: str, cfg: ModelConfig) -> None:
    params.add(f"{prefix}.g", ones_init((cfg.model_dim,), cfg.dtype))
    params.add(f"{prefix}.b", zeros_init((cfg.model_dim,), cfg.dtype))


def _add_ffn(params: ParameterSet, prefix: str, cfg: ModelConfig, rng) -> None:
    params.add(f"{prefix}.w1", uniform_init(rng, (cfg.model_dim, cfg.ffn_dim), cfg.dtype))
    params.add(f"{prefix}.b1", zeros_init((cfg.ffn_dim,), cfg.dtype))
    params.add(f"{prefix}.w2", uniform_init(rng, (cfg.ffn_dim, cfg.model_dim), cfg.dtype))
    params.add(f"{prefix}.b2", zeros_init((cfg.model_dim,), cfg.dtype))


def _add_encoder_layer(params: ParameterSet, prefix: str, cfg: ModelConfig, rng) -> None:
    _add_attention(params, f"{prefix}.attn", cfg, rng)
    _add_layer_norm(params, f"{prefix}.ln_attn", cfg)
    _add_ffn(params, f"{prefix}.ffn", cfg, rng)
    _add_layer_norm(params, f"{prefix}.ln_ffn", cfg)


def _add_decoder_layer(
    params: ParameterSet, prefix: str, cfg: ModelConfig, rng, guided: bool
) -> None:
    _add_attention(params, f"{prefix}.self", cfg, rng)
    _add_layer_norm(params, f"{prefix}.ln_self", cfg)
    if guided:
        _add_attention(params, f"{prefix}.gxa", cfg, rng)
        _add_layer_norm(params, f"{prefix}.ln_gxa", cfg)
    _add_attention(params, f"{prefix}.dxa", cfg, rng)
    _add_layer_norm(params, f"{prefix}.ln_dxa", cfg)
    _add_ffn(params, f"{prefix}.ffn", cfg, rng)
    _add_layer_norm(params, f"{prefix}.ln_ffn", cfg)


def _add_embeddings(params: ParameterSet, cfg: ModelConfig, rng) -> None:
    params.add("tok_emb", embedding_init(rng, (cfg.vocab_size, cfg.model_dim), cfg.dtype))
    params.add("pos_emb", embedding_init(rng, (cfg.max_len, cfg.model_dim), cfg.dtype))


def build_summarizer(cfg: ModelConfig, seed: int = 0) -> ParameterSet:
    rng = np.random.default_rng(seed)
    params = ParameterSet()
    _add_embeddings(params, cfg, rng)
    for i in range(cfg.shared_bottom_layers):
        _add_encoder_layer(params, f"enc_shared.{i}", cfg, rng)
    for i in range(cfg.shared_bottom_layers, cfg.layers):
        _add_encoder_layer(params, f"enc_doc.{i}", cfg, rng)
    for i in range(cfg.shared_bottom_layers, cfg.layers):
        _add_encoder_layer(params, f"enc_gui.{i}", cfg, rng)
    for i in range(cfg.layers):
        _add_decoder_layer(params, f"dec.{i}", cfg, rng, guided=True)
    return params


def build_corrector(cfg: ModelConfig, seed: int = 0) -> ParameterSet:
    rng = np.random.default_rng(seed)
    params = ParameterSet()
    _add_embeddings(params, cfg, rng)
    for i in range(cfg.layers):
        _add_encoder_layer(params, f"enc.{i}", cfg, rng)
    for i in range(cfg.layers):
        _add_decoder_layer(params, f"dec.{i}", cfg, rng, guided=False)
    return params


def build_classifier(cfg: ModelConfig, seed: int = 0) -> ParameterSet:
    rng = np.random.default_rng(seed)
    params = ParameterSet()
    _add_embeddings(params, cfg, rng)
    for i in range(cfg.layers):
        _add_encoder_layer(params, f"enc.{i}", cfg, rng)
    # Zero-initialized head keeps the untrained classifier exactly symmetric.
    params.add("head.w", zeros_init((cfg.model_dim, 2), cfg.dtype))
    params.add("head.b", zeros_init((2,), cfg.dtype))
    return params


def _as_ids(ids) -> np.ndarray:
    arr = np.asarray(ids, dtype=np.int64)
    if arr.ndim != 1:
        raise ModelError(f"token sequence must be 1-D, got shape {arr.shape}")
    return arr


def _check_length(ids: np.ndarray, cfg: ModelConfig, what: str) -> None:
    if ids.size < 1:
        raise ModelError(f"{what} must contain at least one token")
    if ids.size > cfg.max_len:
        raise ModelError(f"{what} of length {ids.size} exceeds max_len {cfg.max_len}")


def key_mask(ids: np.ndarray) -> np.ndarray:
    return ids != PAD_ID


def causal_mask(length: int) -> np.ndarray:
    return np.tril(np.ones((length, length), dtype=bool))


def _activate(cfg: ModelConfig, x: ad.Tensor) -> ad.Tensor:
    return ad.relu(x) if cfg.activation == "relu" else ad.gelu(x)


def _embed(params: ParameterSet, cfg: ModelConfig, ids: np.ndarray) -> ad.Tensor:
    # No sqrt(d) embedding rescale: the first layer norm makes it redundant and
    # the multiply inflates higher derivatives, hurting finite-difference checks.
    tok = ad.embedding_lookup(params["tok_emb"], ids)
    pos = ad.embedding_lookup(params["pos_emb"], np.arange(ids.size))
    return ad.add(tok, pos)


def _attention_block(
    params: ParameterSet,
    prefix: str,
    q_in: ad.Tensor,
    kv_in: ad.Tensor,
    mask: np.ndarray | None,
    cfg: ModelConfig,
) -> ad.Tensor:
    q = ad.add(ad.matmul(q_in, params[f"{prefix}.wq"]), params[f"{prefix}.bq"])
    k = ad.add(ad.matmul(kv_in, params[f"{prefix}.wk"]), params[f"{prefix}.bk"])
    v = ad.add(ad.matmul(kv_in, params[f"{prefix}.wv"]), params[f"{prefix}.bv"])
    mixed = ad.multi_head_attention(q, k, v, mask, cfg.heads)
    return ad.add(ad.matmul(mixed, params[f"{prefix}.wo"]), params[f"{prefix}.bo"])


def _layer_norm(params: ParameterSet, prefix: str, x: ad.Tensor) -> ad.Tensor:
    return ad.layer_norm(x, params[f"{prefix}.g"], params[f"{prefix}.b"])


def _ffn(params: ParameterSet, prefix: str, x: ad.Tensor, cfg: ModelConfig) -> ad.Tensor:
    hidden = _activate(cfg, ad.add(ad.matmul(x, params[f"{prefix}.w1"]), params[f"{prefix}.b1"]))
    return ad.add(ad.matmul(hidden, params[f"{prefix}.w2"]), params[f"{prefix}.b2"])


def _encoder_layer(
    params: ParameterSet, prefix: str, x: ad.Tensor, mask: np.ndarray, cfg: ModelConfig
) -> ad.Tensor:
    attended = _attention_block(params, f"{prefix}.attn", x, x, mask, cfg)
    x = _layer_norm(params, f"{prefix}.ln_attn", ad.add(x, attended))
    return _layer_norm(params, f"{prefix}.ln_ffn", ad.add(x, _ffn(params, f"{prefix}.ffn", x, cfg)))


def _run_encoder(
    params: ParameterSet,
    cfg: ModelConfig,
    ids: np.ndarray,
    layer_prefixes: Sequence[str],
) -> tuple[ad.Tensor, np.ndarray]:
    mask = key_mask(ids)
    x = _embed(params, cfg, ids)
    for prefix in layer_prefixes:
        x = _encoder_layer(params, prefix, x, mask, cfg)
    return x, mask


def _summarizer_encoder_prefixes(cfg: ModelConfig, which: str) -> list[str]:
    shared = [f"enc_shared.{i}" for i in range(cfg.shared_bottom_layers)]
    top = [f"enc_{which}.{i}" for i in range(cfg.shared_bottom_layers, cfg.layers)]
    return shared + top


def encode_source(params: ParameterSet, cfg: ModelConfig, ids) -> tuple[ad.Tensor, np.ndarray]:
    arr = _as_ids(ids)
    _check_length(arr, cfg, "source input")
    return _run_encoder(params, cfg, arr, _summarizer_encoder_prefixes(cfg, "doc"))


def encode_guidance(params: ParameterSet, cfg: ModelConfig, ids) -> tuple[ad.Tensor, np.ndarray]:
    arr = _as_ids(ids)
    _check_length(arr, cfg, "guidance input")
    return _run_encoder(params, cfg, arr, _summarizer_encoder_prefixes(cfg, "gui"))


def encode_single(params: ParameterSet, cfg: ModelConfig, ids) -> tuple[ad.Tensor, np.ndarray]:
    """Encoder pass for corrector/classifier parameter sets (layer names enc.*)."""
    arr = _as_ids(ids)
    _check_length(arr, cfg, "encoder input")
    return _run_encoder(params, cfg, arr, [f"enc.{i}" for i in range(cfg.layers)])


def encode_for_summarizer(params: ParameterSet, cfg: ModelConfig, x_ids, g_ids) -> EncoderOutput:
    doc, doc_mask = encode_source(params, cfg, x_ids)
    gui, gui_mask = encode_guidance(params, cfg, g_ids)
    return EncoderOutput(doc=doc, doc_mask=doc_mask, gui=gui, gui_mask=gui_mask)


def encode_for_corrector(params: ParameterSet, cfg: ModelConfig, ids) -> EncoderOutput:
    doc, doc_mask = encode_single(params, cfg, ids)
    return EncoderOutput(doc=doc, doc_mask=doc_mask)


def decoder_forward(
    params: ParameterSet, cfg: ModelConfig, prefix_ids, enc: EncoderOutput
) -> ad.Tensor:
    """Logits (prefix_len, vocab) for next-token prediction at every position."""
    ids = _as_ids(prefix_ids)
    if ids.size == 0:
        raise ModelError("decoder prefix must not be empty")
    if ids[0] != BOS_ID:
        raise ModelError("decoder prefix must begin with BOS")
    _check_length(ids, cfg, "decoder prefix")
    guided = enc.gui is not None
    x = _embed(params, cfg, ids)
    causal = causal_mask(ids.size)
    for i in range(cfg.layers):
        prefix = f"dec.{i}"
        x = _layer_norm(
            params, f"{prefix}.ln_self",
            ad.add(x, _attention_block(params, f"{prefix}.self", x, x, causal, cfg)),
        )
        if guided:
            x = _layer_norm(
                params, f"{prefix}.ln_gxa",
                ad.add(x, _attention_block(params, f"{prefix}.gxa", x, enc.gui, enc.gui_mask, cfg)),
            )
        x = _layer_norm(
            params, f"{prefix}.ln_dxa",
            ad.add(x, _attention_block(params, f"{prefix}.dxa", x, enc.doc, enc.doc_mask, cfg)),
        )
        x = _layer_norm(params, f"{prefix}.ln_ffn", ad.add(x, _ffn(params, f"{prefix}.ffn", x, cfg)))
    return ad.matmul(x, ad.transpose(params["tok_emb"], (1, 0)))


def decoder_step(
    params: ParameterSet, cfg: ModelConfig, prefix_ids, enc: EncoderOutput
) -> np.ndarray:
    """Next-token logits for the position after the prefix (inference use)."""
    with ad.no_grad():
        logits = decoder_forward(params, cfg, prefix_ids, enc)
    return logits.data[-1]


def _validate_target(y: np.ndarray) -> None:
    content = y[y != PAD_ID]
    if content.size < 2 or content[0] != BOS_ID or content[-1] != EOS_ID:
        raise ModelError("target sequence must begin with BOS and end with EOS")


def sequence_nll(
    params: ParameterSet, cfg: ModelConfig, enc: EncoderOutput, y_ids
) -> ad.Tensor:
    """Mean per-token negative log-likelihood of y under teacher forcing."""
    y = _as_ids(y_ids)
    _validate_target(y)
    _check_length(y, cfg, "target")
    logits = decoder_forward(params, cfg, y[:-1], enc)
    targets = y[1:]
    logp = ad.log_softmax(logits, axis=-1)
    picked = ad.pick(logp, targets)
    weights = (targets != PAD_ID).astype(cfg.dtype)
    weighted = ad.mul(picked, ad.Tensor(weights))
    return ad.scale(ad.sum_(weighted), -1.0 / float(weights.sum()))


def summarizer_loss(params: ParameterSet, cfg: ModelConfig, x_ids, g_ids, y_ids) -> ad.Tensor:
    enc = encode_for_summarizer(params, cfg, x_ids, g_ids)
    return sequence_nll(params, cfg, enc, y_ids)


def seq2seq_loss(params: ParameterSet, cfg: ModelConfig, src_ids, y_ids) -> ad.Tensor:
    """Loss for the guidance-free seq2seq (corrector architecture)."""
    enc = encode_for_corrector(params, cfg, src_ids)
    return sequence_nll(params, cfg, enc, y_ids)


def corrector_encoder_input(summary_ids: Sequence[int], doc_ids: Sequence[int], max_len: int) -> list[int]:
    return (list(summary_ids) + [SEP_ID] + list(doc_ids))[:max_len]


def corrector_loss(
    params: ParameterSet, cfg: ModelConfig, corrupt_ids, doc_ids, clean_ids
) -> ad.Tensor:
    src = corrector_encoder_input(corrupt_ids, doc_ids, cfg.max_len)
    return seq2seq_loss(params, cfg, src, clean_ids)


def classifier_logits(params: ParameterSet, cfg: ModelConfig, input_ids) -> ad.Tensor:
    hidden, _ = encode_single(params, cfg, input_ids)
    pooled = hidden[0:1, :]
    logits = ad.add(ad.matmul(pooled, params["head.w"]), params["head.b"])
    return ad.reshape(logits, (2,))


def classifier_input(claim_ids: Sequence[int], text_ids: Sequence[int], max_len: int) -> list[int]:
    return (list(claim_ids) + [SEP_ID] + list(text_ids))[:max_len]


def classifier_loss(
    params: ParameterSet, cfg: ModelConfig, claim_ids, text_ids, label: str
) -> ad.Tensor:
    index = CORRECT_INDEX if label == "CORRECT" else INCORRECT_INDEX
    logits = classifier_logits(params, cfg, classifier_input(claim_ids, text_ids, cfg.max_len))
    logp = ad.log_softmax(logits, axis=-1)
    return ad.scale(ad.sum_(ad.mul(logp, ad.Tensor(np.eye(2, dtype=cfg.dtype)[index]))), -1.0)


def classify_consistency(params: ParameterSet, cfg: ModelConfig, claim_ids, text_ids) -> float:
    """Probability that the claim is consistent with the text, in [0, 1]."""
    with ad.no_grad():
        logits = classifier_logits(
            params, cfg, classifier_input(claim_ids, text_ids, cfg.max_len)
        )
        probs = ad.softmax(logits, axis=-1)
    return float(probs.data[CORRECT_INDEX])


def micro_config(vocab_size: int, **overrides) -> ModelConfig:
    """Small default configuration used by fixtures and tests."""
    base = ModelConfig(
        layers=2,
        shared_bottom_layers=1,
        model_dim=64,
        heads=4,
        ffn_dim=256,
        max_len=128,
        vocab_size=vocab_size,
    )
    return replace(base, **overrides) if overrides else base
