"""Transformer encoder branches, pooling strategies, and downstream heads.

Two wirings share one implementation of the encoder layer:

* siamese: each branch attends only over its own tokens;
* crossed: each branch's queries come from its own previous-layer states
  while keys and values are the concatenation of BOTH branches' states,
  so every token can attend across the question/answer boundary.

Both branches always share one parameter set.  Padding positions are
excluded from attention by an additive -1e9 on their key columns before
the softmax, which drives their weights to exactly zero in float64.

Heads that consume per-position states (multi-scale CNN, BiGRU) first
zero out padding rows, so sliding windows and the reverse recurrence
cannot leak padding content into the sentence representation.
"""

from __future__ import annotations

import enum
import math
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import tensor as tt
from .errors import ConfigError, ContractError, DimensionError
from .tensor import Tensor

ATTENTION_MASK_BIAS = -1e9


class PoolingStrategy(str, enum.Enum):
    FIRST_TOKEN = "first"
    MEAN_TOKEN = "mean"
    MEAN_USEFUL_TOKEN = "mean-useful"


class CrossSchedule(str, enum.Enum):
    """Which layers mix the two branches in crossed mode."""

    EVERY_LAYER = "every"
    LAST_LAYER = "last"


@dataclass(frozen=True)
class EncoderConfig:
    dim: int
    layers: int
    heads: int
    ffn_dim: int
    mode: str = "siamese"  # "siamese" or "crossed"
    cross_schedule: CrossSchedule = CrossSchedule.EVERY_LAYER

    def __post_init__(self):
        if self.layers < 1 or self.heads < 1:
            raise ConfigError(f"layers and heads must be >= 1, got {self.layers}, {self.heads}")
        if self.dim % self.heads != 0:
            raise ConfigError(f"hidden dim {self.dim} not divisible by {self.heads} heads")
        if self.ffn_dim < 1:
            raise ConfigError(f"ffn_dim must be >= 1, got {self.ffn_dim}")
        if self.mode not in ("siamese", "crossed"):
            raise ConfigError(f"encoder mode must be siamese or crossed, got {self.mode!r}")


@dataclass
class TokenStates:
    """Per-position representations of one branch plus its useful mask."""

    states: Tensor  # [L x dim]
    mask: np.ndarray  # [L] of 0/1

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=np.int64).reshape(-1)
        if self.states.data.ndim != 2 or self.states.shape[0] != self.mask.shape[0]:
            raise DimensionError(
                f"states {self.states.shape} and mask {self.mask.shape} disagree"
            )

    @property
    def length(self) -> int:
        return self.states.shape[0]


@dataclass(frozen=True)
class CnnHeadConfig:
    kernel_sizes: tuple[int, ...]
    feature_maps: int

    def __post_init__(self):
        sizes = tuple(sorted(set(int(k) for k in self.kernel_sizes)))
        object.__setattr__(self, "kernel_sizes", sizes)
        if not sizes or any(k < 1 for k in sizes):
            raise ConfigError(f"kernel sizes must be positive, got {self.kernel_sizes}")
        if self.feature_maps < 1:
            raise ConfigError(f"feature_maps must be >= 1, got {self.feature_maps}")

    @property
    def output_dim(self) -> int:
        return len(self.kernel_sizes) * self.feature_maps


@dataclass(frozen=True)
class GruHeadConfig:
    hidden: int

    def __post_init__(self):
        if self.hidden < 1:
            raise ConfigError(f"gru hidden size must be >= 1, got {self.hidden}")

    @property
    def output_dim(self) -> int:
        return 2 * self.hidden


# ---------------------------------------------------------------------------
# parameter initialization


def init_encoder_params(cfg: EncoderConfig, rng: np.random.Generator) -> "OrderedDict[str, Tensor]":
    """Attention/FFN weights uniform in [-1/sqrt(dim), 1/sqrt(dim)], biases zero."""
    d, dh = cfg.dim, cfg.dim // cfg.heads
    bound = 1.0 / math.sqrt(d)

    def weight(shape):
        return Tensor(rng.uniform(-bound, bound, shape), requires_grad=True)

    def zeros(shape):
        return Tensor(np.zeros(shape), requires_grad=True)

    def ones(shape):
        return Tensor(np.ones(shape), requires_grad=True)

    params: OrderedDict[str, Tensor] = OrderedDict()
    for i in range(cfg.layers):
        base = f"encoder.layer{i}"
        for j in range(cfg.heads):
            for name in ("query", "key", "value"):
                params[f"{base}.head{j}.{name}_w"] = weight((d, dh))
                params[f"{base}.head{j}.{name}_b"] = zeros(dh)
        params[f"{base}.out_w"] = weight((d, d))
        params[f"{base}.out_b"] = zeros(d)
        params[f"{base}.norm_attn_gain"] = ones(d)
        params[f"{base}.norm_attn_bias"] = zeros(d)
        params[f"{base}.ffn_in_w"] = weight((d, cfg.ffn_dim))
        params[f"{base}.ffn_in_b"] = zeros(cfg.ffn_dim)
        params[f"{base}.ffn_out_w"] = weight((cfg.ffn_dim, d))
        params[f"{base}.ffn_out_b"] = zeros(d)
        params[f"{base}.norm_ffn_gain"] = ones(d)
        params[f"{base}.norm_ffn_bias"] = zeros(d)
    return params


def init_cnn_params(cfg: CnnHeadConfig, dim: int, rng: np.random.Generator) -> "OrderedDict[str, Tensor]":
    params: OrderedDict[str, Tensor] = OrderedDict()
    for k in cfg.kernel_sizes:
        fan_in = k * dim
        bound = 1.0 / math.sqrt(fan_in)
        params[f"cnn.k{k}.filters"] = Tensor(
            rng.uniform(-bound, bound, (fan_in, cfg.feature_maps)), requires_grad=True
        )
        params[f"cnn.k{k}.bias"] = Tensor(np.zeros(cfg.feature_maps), requires_grad=True)
    return params


def init_gru_params(cfg: GruHeadConfig, dim: int, rng: np.random.Generator) -> "OrderedDict[str, Tensor]":
    fan_in = cfg.hidden + dim
    bound = 1.0 / math.sqrt(fan_in)
    params: OrderedDict[str, Tensor] = OrderedDict()
    for direction in ("fwd", "bwd"):
        for gate in ("reset", "update", "cand"):
            params[f"gru.{direction}.{gate}_w"] = Tensor(
                rng.uniform(-bound, bound, (cfg.hidden, fan_in)), requires_grad=True
            )
            params[f"gru.{direction}.{gate}_b"] = Tensor(np.zeros(cfg.hidden), requires_grad=True)
    return params


# ---------------------------------------------------------------------------
# encoder forward


def _key_mask_bias(kv_mask: np.ndarray) -> Tensor:
    return Tensor(np.where(kv_mask > 0, 0.0, ATTENTION_MASK_BIAS))


def _encoder_layer(
    x: Tensor,
    kv: Tensor,
    kv_mask: np.ndarray,
    params: Mapping[str, Tensor],
    prefix: str,
    cfg: EncoderConfig,
) -> Tensor:
    dh = cfg.dim // cfg.heads
    inv_scale = 1.0 / math.sqrt(dh)
    mask_bias = _key_mask_bias(kv_mask)
    merged = None
    for j in range(cfg.heads):
        p = f"{prefix}.head{j}"
        q = tt.add(tt.matmul(x, params[f"{p}.query_w"]), params[f"{p}.query_b"])
        k = tt.add(tt.matmul(kv, params[f"{p}.key_w"]), params[f"{p}.key_b"])
        v = tt.add(tt.matmul(kv, params[f"{p}.value_w"]), params[f"{p}.value_b"])
        scores = tt.scale(tt.matmul(q, tt.transpose(k)), inv_scale)
        weights = tt.softmax_rows(tt.add(scores, mask_bias))
        head_out = tt.matmul(weights, v)
        merged = head_out if merged is None else tt.concat(merged, head_out, axis=1)
    attn = tt.add(tt.matmul(merged, params[f"{prefix}.out_w"]), params[f"{prefix}.out_b"])
    x = tt.layer_norm_rows(
        tt.add(x, attn), params[f"{prefix}.norm_attn_gain"], params[f"{prefix}.norm_attn_bias"]
    )
    hidden = tt.relu(tt.add(tt.matmul(x, params[f"{prefix}.ffn_in_w"]), params[f"{prefix}.ffn_in_b"]))
    ffn = tt.add(tt.matmul(hidden, params[f"{prefix}.ffn_out_w"]), params[f"{prefix}.ffn_out_b"])
    return tt.layer_norm_rows(
        tt.add(x, ffn), params[f"{prefix}.norm_ffn_gain"], params[f"{prefix}.norm_ffn_bias"]
    )


def _check_input(branch: TokenStates, cfg: EncoderConfig) -> None:
    if branch.states.shape[1] != cfg.dim:
        raise DimensionError(
            f"encoder expects feature dim {cfg.dim}, got states of shape {branch.states.shape}"
        )


def encode_siamese(
    question: TokenStates, answer: TokenStates, params: Mapping[str, Tensor], cfg: EncoderConfig
) -> tuple[TokenStates, TokenStates]:
    """Run both branches through the same layer stack, never seeing each other."""
    _check_input(question, cfg)
    _check_input(answer, cfg)
    outputs = []
    for branch in (question, answer):
        x = branch.states
        for i in range(cfg.layers):
            x = _encoder_layer(x, x, branch.mask, params, f"encoder.layer{i}", cfg)
        outputs.append(TokenStates(states=x, mask=branch.mask))
    return outputs[0], outputs[1]


def encode_crossed(
    question: TokenStates, answer: TokenStates, params: Mapping[str, Tensor], cfg: EncoderConfig
) -> tuple[TokenStates, TokenStates]:
    """Crossed wiring: keys/values span both branches on crossing layers.

    Branch updates are synchronous: both new states are computed from the
    previous layer's states before either branch advances.
    """
    _check_input(question, cfg)
    _check_input(answer, cfg)
    xq, xa = question.states, answer.states
    combined_mask = np.concatenate([question.mask, answer.mask])
    for i in range(cfg.layers):
        prefix = f"encoder.layer{i}"
        crossing = cfg.cross_schedule is CrossSchedule.EVERY_LAYER or i == cfg.layers - 1
        if crossing:
            kv = tt.concat(xq, xa, axis=0)
            new_q = _encoder_layer(xq, kv, combined_mask, params, prefix, cfg)
            new_a = _encoder_layer(xa, kv, combined_mask, params, prefix, cfg)
        else:
            new_q = _encoder_layer(xq, xq, question.mask, params, prefix, cfg)
            new_a = _encoder_layer(xa, xa, answer.mask, params, prefix, cfg)
        xq, xa = new_q, new_a
    return TokenStates(states=xq, mask=question.mask), TokenStates(states=xa, mask=answer.mask)


# ---------------------------------------------------------------------------
# pooling and heads


def pool(branch: TokenStates, strategy: PoolingStrategy) -> Tensor:
    """Reduce [L x dim] token states to one sentence vector."""
    strategy = PoolingStrategy(strategy)
    if strategy is PoolingStrategy.FIRST_TOKEN:
        return tt.row(branch.states, 0)
    if strategy is PoolingStrategy.MEAN_TOKEN:
        return tt.mean_rows(branch.states)
    if not branch.mask.any():
        raise ContractError("mean_useful_token pooling needs at least one useful position")
    return tt.masked_mean_rows(branch.states, branch.mask)


def _zero_padding_rows(branch: TokenStates) -> Tensor:
    keep = np.repeat(branch.mask.astype(np.float64), branch.states.shape[1])
    keep = keep.reshape(branch.states.shape)
    return tt.mul(branch.states, Tensor(keep))


def cnn_head(branch: TokenStates, cfg: CnnHeadConfig, params: Mapping[str, Tensor]) -> Tensor:
    """Multi-scale convolution over token states, max-pooled per filter.

    For each kernel size k the L-k+1 windows are flattened rows of a
    window matrix, so one matrix product evaluates every filter at every
    position; ReLU then a per-filter max over positions.  Outputs are
    concatenated in (kernel size, filter) order.
    """
    length = branch.length
    for k in cfg.kernel_sizes:
        if k > length:
            raise ConfigError(f"kernel size {k} exceeds sequence length {length}")
    states = _zero_padding_rows(branch)
    result = None
    for k in cfg.kernel_sizes:
        positions = length - k + 1
        windows = tt.slice_range(states, 0, positions, axis=0)
        for offset in range(1, k):
            windows = tt.concat(
                windows, tt.slice_range(states, offset, offset + positions, axis=0), axis=1
            )
        responses = tt.relu(
            tt.add(tt.matmul(windows, params[f"cnn.k{k}.filters"]), params[f"cnn.k{k}.bias"])
        )
        pooled = tt.column_max(responses)
        result = pooled if result is None else tt.concat(result, pooled)
    return result


def _gru_scan(
    inputs: list[Tensor], params: Mapping[str, Tensor], direction: str, hidden: int
) -> list[Tensor]:
    w_reset = params[f"gru.{direction}.reset_w"]
    b_reset = params[f"gru.{direction}.reset_b"]
    w_update = params[f"gru.{direction}.update_w"]
    b_update = params[f"gru.{direction}.update_b"]
    w_cand = params[f"gru.{direction}.cand_w"]
    b_cand = params[f"gru.{direction}.cand_b"]
    ones = Tensor(np.ones(hidden))
    state = Tensor(np.zeros(hidden))
    outputs = []
    for x in inputs:
        joint = tt.concat(state, x)
        reset = tt.sigmoid(tt.add(tt.matvec(w_reset, joint), b_reset))
        update = tt.sigmoid(tt.add(tt.matvec(w_update, joint), b_update))
        gated = tt.concat(tt.mul(reset, state), x)
        cand = tt.tanh(tt.add(tt.matvec(w_cand, gated), b_cand))
        state = tt.add(tt.mul(tt.sub(ones, update), state), tt.mul(update, cand))
        outputs.append(state)
    return outputs


def bigru_head(branch: TokenStates, cfg: GruHeadConfig, params: Mapping[str, Tensor]) -> Tensor:
    """Forward and backward gated-recurrent scans, concatenated per position,
    then mean-pooled over useful positions."""
    states = _zero_padding_rows(branch)
    rows = [tt.row(states, t) for t in range(branch.length)]
    forward = _gru_scan(rows, params, "fwd", cfg.hidden)
    backward = _gru_scan(rows[::-1], params, "bwd", cfg.hidden)[::-1]
    useful = [t for t in range(branch.length) if branch.mask[t]]
    if not useful:
        raise ContractError("bigru_head needs at least one useful position")
    total = None
    for t in useful:
        step = tt.concat(forward[t], backward[t])
        total = step if total is None else tt.add(total, step)
    return tt.scale(total, 1.0 / len(useful))
