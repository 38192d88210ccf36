"""Model assembly: the four architecture variants, similarity, and the margin objective.

``forward_pair`` wires embeddings -> encoder -> pooling/head for one
question-answer pair; both branches always share parameters.  Similarity
is epsilon-guarded cosine, clamped to [-1, 1].  The training objective is
the hinge max{0, margin - sim_pos + sim_neg}; it is exactly zero, with
zero gradient, whenever sim_pos - sim_neg >= margin.

``cosine``/``margin_loss`` return plain floats for scoring and reporting;
the ``*_node`` twins build the same arithmetic out of tensor ops so the
loss is differentiable.  Both sides use identical operation order, so a
scored similarity equals the traced one bit for bit.
"""

from __future__ import annotations

import enum
import math
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from . import tensor as tt
from .encoders import (
    CnnHeadConfig,
    CrossSchedule,
    EncoderConfig,
    GruHeadConfig,
    PoolingStrategy,
    TokenStates,
    bigru_head,
    cnn_head,
    encode_crossed,
    encode_siamese,
    init_cnn_params,
    init_encoder_params,
    init_gru_params,
    pool,
)
from .errors import ConfigError, DimensionError
from .tensor import Tensor
from .text import EmbeddingTables, EncodedSequence, Vocabulary, embed, encode

COSINE_EPS = 1e-12


class Variant(str, enum.Enum):
    SIAMESE_BERT = "siamese-bert"
    CROSSED_BERT_SIAMESE = "crossed-bert"
    CROSSED_BERT_MULTI_SCALE_CNN = "crossed-cnn"
    CROSSED_BERT_BIGRU = "crossed-bigru"


class SegmentScheme(str, enum.Enum):
    """How segment ids label the two branches.

    ``shared`` gives every position segment 0, keeping the two branch
    functions literally identical (same text in, same vector out).
    ``branch`` labels answers with segment 1, feeding the crossed
    attention an explicit branch signal at the cost of that symmetry.
    """

    SHARED = "shared"
    BRANCH = "branch"


@dataclass
class ModelConfig:
    variant: Variant
    encoder: EncoderConfig
    max_len: int
    vocab_size: int
    pooling: PoolingStrategy = PoolingStrategy.MEAN_USEFUL_TOKEN
    cnn: CnnHeadConfig | None = None
    gru: GruHeadConfig | None = None
    segments: SegmentScheme = SegmentScheme.SHARED

    def __post_init__(self):
        self.variant = Variant(self.variant)
        self.pooling = PoolingStrategy(self.pooling)
        self.segments = SegmentScheme(self.segments)
        self.validate()

    def validate(self) -> None:
        if self.max_len < 3:
            raise ConfigError(f"max_len must be at least 3, got {self.max_len}")
        if self.vocab_size < 4:
            raise ConfigError(f"vocab_size must cover the 4 reserved ids, got {self.vocab_size}")
        expected_mode = "siamese" if self.variant is Variant.SIAMESE_BERT else "crossed"
        if self.encoder.mode != expected_mode:
            raise ConfigError(
                f"variant {self.variant.value} needs encoder mode {expected_mode!r}, "
                f"got {self.encoder.mode!r}"
            )
        needs_cnn = self.variant is Variant.CROSSED_BERT_MULTI_SCALE_CNN
        needs_gru = self.variant is Variant.CROSSED_BERT_BIGRU
        if needs_cnn != (self.cnn is not None):
            raise ConfigError(f"variant {self.variant.value}: cnn head config mismatch")
        if needs_gru != (self.gru is not None):
            raise ConfigError(f"variant {self.variant.value}: gru head config mismatch")
        if self.cnn is not None and max(self.cnn.kernel_sizes) > self.max_len:
            raise ConfigError(
                f"kernel sizes {self.cnn.kernel_sizes} exceed sequence length {self.max_len}"
            )

    @property
    def output_dim(self) -> int:
        if self.variant is Variant.CROSSED_BERT_MULTI_SCALE_CNN:
            return self.cnn.output_dim
        if self.variant is Variant.CROSSED_BERT_BIGRU:
            return self.gru.output_dim
        return self.encoder.dim

    def to_text(self) -> str:
        """Canonical key=value serialization; parsing it back round-trips."""
        lines = [
            f"variant={self.variant.value}",
            f"hidden={self.encoder.dim}",
            f"layers={self.encoder.layers}",
            f"heads={self.encoder.heads}",
            f"ffn_dim={self.encoder.ffn_dim}",
            f"max_len={self.max_len}",
            f"vocab_size={self.vocab_size}",
            f"pooling={self.pooling.value}",
            f"cross_layers={self.encoder.cross_schedule.value}",
            f"segments={self.segments.value}",
        ]
        if self.cnn is not None:
            lines.append("kernel_sizes=" + ",".join(str(k) for k in self.cnn.kernel_sizes))
            lines.append(f"feature_maps={self.cnn.feature_maps}")
        if self.gru is not None:
            lines.append(f"gru_hidden={self.gru.hidden}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ModelConfig":
        fields: dict[str, str] = {}
        for lineno, line in enumerate(text.splitlines()):
            line = line.strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"config line {lineno + 1} is not key=value: {line!r}")
            key, value = line.split("=", 1)
            if key in fields:
                raise ConfigError(f"config key {key!r} repeated")
            fields[key] = value
        try:
            variant = Variant(fields.pop("variant"))
            encoder = EncoderConfig(
                dim=int(fields.pop("hidden")),
                layers=int(fields.pop("layers")),
                heads=int(fields.pop("heads")),
                ffn_dim=int(fields.pop("ffn_dim")),
                mode="siamese" if variant is Variant.SIAMESE_BERT else "crossed",
                cross_schedule=CrossSchedule(fields.pop("cross_layers")),
            )
            cnn = None
            if "kernel_sizes" in fields:
                cnn = CnnHeadConfig(
                    kernel_sizes=tuple(int(k) for k in fields.pop("kernel_sizes").split(",")),
                    feature_maps=int(fields.pop("feature_maps")),
                )
            gru = GruHeadConfig(hidden=int(fields.pop("gru_hidden"))) if "gru_hidden" in fields else None
            cfg = cls(
                variant=variant,
                encoder=encoder,
                max_len=int(fields.pop("max_len")),
                vocab_size=int(fields.pop("vocab_size")),
                pooling=PoolingStrategy(fields.pop("pooling")),
                cnn=cnn,
                gru=gru,
                segments=SegmentScheme(fields.pop("segments")),
            )
        except KeyError as missing:
            raise ConfigError(f"config is missing key {missing.args[0]!r}") from None
        except ValueError as bad:
            raise ConfigError(f"config value invalid: {bad}") from None
        if fields:
            raise ConfigError(f"config has unknown keys: {sorted(fields)}")
        return cfg


class ModelParams:
    """Ordered named-parameter store; iteration order is creation order."""

    def __init__(self, tensors: "OrderedDict[str, Tensor]"):
        self._tensors = tensors

    def __getitem__(self, path: str) -> Tensor:
        return self._tensors[path]

    def __contains__(self, path: str) -> bool:
        return path in self._tensors

    def __len__(self) -> int:
        return len(self._tensors)

    def items(self) -> Iterable[tuple[str, Tensor]]:
        return self._tensors.items()

    def paths(self) -> list[str]:
        return list(self._tensors)

    def zero_grad(self) -> None:
        for t in self._tensors.values():
            t.grad = None

    def embeddings(self) -> EmbeddingTables:
        return EmbeddingTables(
            token=self._tensors["embed.token"],
            segment=self._tensors["embed.segment"],
            position=self._tensors["embed.position"],
        )

    def total_scalars(self) -> int:
        return sum(t.size for t in self._tensors.values())


def init_model_params(cfg: ModelConfig, seed: int) -> ModelParams:
    """Build every trainable tensor for the variant, all from one seeded generator."""
    rng = np.random.default_rng(seed)
    tensors: OrderedDict[str, Tensor] = OrderedDict()
    tables = EmbeddingTables.init(cfg.vocab_size, cfg.max_len, cfg.encoder.dim, rng)
    tensors["embed.token"] = tables.token
    tensors["embed.segment"] = tables.segment
    tensors["embed.position"] = tables.position
    tensors.update(init_encoder_params(cfg.encoder, rng))
    if cfg.cnn is not None:
        tensors.update(init_cnn_params(cfg.cnn, cfg.encoder.dim, rng))
    if cfg.gru is not None:
        tensors.update(init_gru_params(cfg.gru, cfg.encoder.dim, rng))
    return ModelParams(tensors)


@dataclass
class PooledPair:
    """Sentence representations of one question-answer pair."""

    q: Tensor
    a: Tensor


def encode_pair(
    q_text: str, a_text: str, vocab: Vocabulary, cfg: ModelConfig
) -> tuple[EncodedSequence, EncodedSequence]:
    """Encode both texts with the model's length and segment convention."""
    a_segment = 1 if cfg.segments is SegmentScheme.BRANCH else 0
    return (
        encode(q_text, vocab, cfg.max_len, segment=0),
        encode(a_text, vocab, cfg.max_len, segment=a_segment),
    )


def forward_pair(
    q_seq: EncodedSequence, a_seq: EncodedSequence, cfg: ModelConfig, params: ModelParams
) -> PooledPair:
    """Run one question-answer pair through the configured variant."""
    if q_seq.length != cfg.max_len or a_seq.length != cfg.max_len:
        raise ConfigError(
            f"sequences of length {q_seq.length}/{a_seq.length} do not match max_len {cfg.max_len}"
        )
    tables = params.embeddings()
    q_in = TokenStates(embed(q_seq, tables), np.asarray(q_seq.useful_mask))
    a_in = TokenStates(embed(a_seq, tables), np.asarray(a_seq.useful_mask))
    if cfg.variant is Variant.SIAMESE_BERT:
        h_q, h_a = encode_siamese(q_in, a_in, params, cfg.encoder)
    else:
        h_q, h_a = encode_crossed(q_in, a_in, params, cfg.encoder)
    if cfg.variant is Variant.CROSSED_BERT_MULTI_SCALE_CNN:
        return PooledPair(q=cnn_head(h_q, cfg.cnn, params), a=cnn_head(h_a, cfg.cnn, params))
    if cfg.variant is Variant.CROSSED_BERT_BIGRU:
        return PooledPair(q=bigru_head(h_q, cfg.gru, params), a=bigru_head(h_a, cfg.gru, params))
    return PooledPair(q=pool(h_q, cfg.pooling), a=pool(h_a, cfg.pooling))


# ---------------------------------------------------------------------------
# similarity and objective


def _as_vector(x) -> np.ndarray:
    data = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    if data.ndim != 1:
        raise DimensionError(f"cosine needs rank-1 vectors, got shape {data.shape}")
    return data


def cosine(q, a) -> float:
    """(q . a) / (|q| |a| + eps), clamped to [-1, 1]."""
    qd, ad = _as_vector(q), _as_vector(a)
    if qd.shape != ad.shape:
        raise DimensionError(f"cosine dimension mismatch: {qd.shape} vs {ad.shape}")
    num = float(np.sum(qd * ad))
    den = math.sqrt(float(np.sum(qd * qd))) * math.sqrt(float(np.sum(ad * ad))) + COSINE_EPS
    return min(1.0, max(-1.0, num / den))


def cosine_node(q: Tensor, a: Tensor) -> Tensor:
    """Differentiable twin of ``cosine``; same arithmetic, same clamping."""
    if q.shape != a.shape or q.data.ndim != 1:
        raise DimensionError(f"cosine dimension mismatch: {q.shape} vs {a.shape}")
    num = tt.sum(tt.mul(q, a))
    den = tt.add(
        tt.mul(tt.sqrt(tt.sum(tt.mul(q, q))), tt.sqrt(tt.sum(tt.mul(a, a)))),
        Tensor([COSINE_EPS]),
    )
    return tt.clip(tt.div(num, den), -1.0, 1.0)


@dataclass(frozen=True)
class LossConfig:
    margin: float = 0.1

    def __post_init__(self):
        if not 0.0 < self.margin <= 1.0:
            raise ConfigError(f"margin must lie in (0, 1], got {self.margin}")


def margin_loss(sim_pos: float, sim_neg: float, cfg: LossConfig) -> float:
    """max{0, margin - sim_pos + sim_neg}."""
    return max(0.0, cfg.margin - sim_pos + sim_neg)


def margin_loss_node(sim_pos: Tensor, sim_neg: Tensor, cfg: LossConfig) -> Tensor:
    return tt.relu(tt.add(tt.sub(Tensor([cfg.margin]), sim_pos), sim_neg))


def triplet_loss_node(
    q_seq: EncodedSequence,
    pos_seq: EncodedSequence,
    neg_seq: EncodedSequence,
    cfg: ModelConfig,
    params: ModelParams,
    loss_cfg: LossConfig,
) -> Tensor:
    """Margin loss of one (question, relevant, irrelevant) triplet."""
    positive = forward_pair(q_seq, pos_seq, cfg, params)
    negative = forward_pair(q_seq, neg_seq, cfg, params)
    sim_pos = cosine_node(positive.q, positive.a)
    sim_neg = cosine_node(negative.q, negative.a)
    return margin_loss_node(sim_pos, sim_neg, loss_cfg)


class Matcher:
    """Config, parameters, and vocabulary bundled for scoring text pairs."""

    def __init__(self, cfg: ModelConfig, params: ModelParams, vocab: Vocabulary):
        if vocab.size != cfg.vocab_size:
            raise ConfigError(
                f"vocabulary size {vocab.size} does not match config vocab_size {cfg.vocab_size}"
            )
        self.cfg = cfg
        self.params = params
        self.vocab = vocab

    def similarity(self, q_text: str, a_text: str) -> float:
        q_seq, a_seq = encode_pair(q_text, a_text, self.vocab, self.cfg)
        pair = forward_pair(q_seq, a_seq, self.cfg, self.params)
        return cosine(pair.q, pair.a)
