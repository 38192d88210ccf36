"""Triplet training with AdamW and binary checkpoint persistence.

Determinism contract: (seed, data, config) fully determine the triplet
streams, the loss trajectory, and the final parameters, so two identical
runs produce byte-identical checkpoints and metric logs.

Checkpoint wire format (all integers little-endian):

    magic  b"QAMC"
    u32    format version (currently 1)
    u32    config length, then that many UTF-8 bytes (canonical key=value lines)
    32B    sha256 of the vocabulary's canonical serialization
    u64    run seed
    u32    epoch counter
    u8     optimizer-state flag
    u32    parameter count, then per parameter:
               u32 path length, path UTF-8 bytes,
               u8 rank, u32 dims...,
               payload of little-endian float32
    if the flag is set: u64 step count, f64 lr/beta1/beta2/eps/weight_decay,
    then first-moment and second-moment tables in parameter order, same
    record layout with float64 payloads.
"""

from __future__ import annotations

import io
import os
import struct
import tempfile
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as tt
from .data import Dataset
from .errors import (
    CheckpointError,
    ConfigError,
    ContractError,
    DatasetError,
    NumericsError,
    PersistenceError,
)
from .evaluation import build_pools, dataset_scorer, evaluate_pools
from .matching import (
    LossConfig,
    Matcher,
    ModelConfig,
    ModelParams,
    encode_pair,
    init_model_params,
    triplet_loss_node,
)
from .tensor import ComputationTape, Tensor, backward
from .text import Vocabulary

CHECKPOINT_MAGIC = b"QAMC"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class Triplet:
    question_id: str
    positive_answer_id: str
    negative_answer_id: str


def sample_triplets(dataset: Dataset, rng: np.random.Generator, question_ids=None) -> list[Triplet]:
    """One triplet per (question, linked answer), negatives drawn uniformly
    from the answers not linked to that question; stream order shuffled."""
    qids = list(question_ids) if question_ids is not None else dataset.split_questions("train")
    if len(dataset.answers) < 2:
        raise DatasetError("triplet sampling needs at least two answers")
    all_answers = sorted(dataset.answers)
    triplets: list[Triplet] = []
    for qid in qids:
        linked = dataset.answers_of(qid)
        if not linked:
            raise DatasetError(f"question {qid!r} has no linked answer")
        linked_set = set(linked)
        eligible = [aid for aid in all_answers if aid not in linked_set]
        if not eligible:
            raise DatasetError(f"question {qid!r} has no possible negative answer")
        for positive in linked:
            negative = eligible[int(rng.integers(0, len(eligible)))]
            triplets.append(Triplet(qid, positive, negative))
    order = rng.permutation(len(triplets))
    return [triplets[i] for i in order]


class AdamW:
    """Adam with decoupled weight decay: the decay term bypasses the moments."""

    def __init__(
        self,
        params: ModelParams,
        lr: float,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        weight_decay: float = 0.01,
    ):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m: "OrderedDict[str, np.ndarray]" = OrderedDict(
            (path, np.zeros_like(t.data)) for path, t in params.items()
        )
        self.v: "OrderedDict[str, np.ndarray]" = OrderedDict(
            (path, np.zeros_like(t.data)) for path, t in params.items()
        )

    def zero_grad(self) -> None:
        self.params.zero_grad()

    def step(self) -> None:
        self.t += 1
        bias1 = 1.0 - self.beta1**self.t
        bias2 = 1.0 - self.beta2**self.t
        for path, tensor in self.params.items():
            if tensor.grad is None:
                raise ContractError(f"parameter {path!r} has no gradient")
            g = tensor.grad
            m = self.m[path]
            v = self.v[path]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            m_hat = m / bias1
            v_hat = v / bias2
            tensor.data -= self.lr * (m_hat / (np.sqrt(v_hat) + self.eps)) + (
                self.lr * self.weight_decay * tensor.data
            )


@dataclass
class TrainConfig:
    epochs: int
    lr: float = 1e-3
    margin: float = 0.1
    batch_size: int = 16
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    train_fraction: float = 1.0
    eval_dev: bool = False
    pool_size: int = 10
    keep_optimizer: bool = False

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0.0 < self.train_fraction <= 1.0:
            raise ConfigError(f"train_fraction must lie in (0, 1], got {self.train_fraction}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")
        LossConfig(self.margin)  # reuse its range check


@dataclass
class OptimizerSnapshot:
    t: int
    lr: float
    beta1: float
    beta2: float
    eps: float
    weight_decay: float
    m: "OrderedDict[str, np.ndarray]"
    v: "OrderedDict[str, np.ndarray]"


@dataclass
class Checkpoint:
    version: int
    config: ModelConfig
    vocab_hash: bytes
    arrays: "OrderedDict[str, np.ndarray]"  # float32 payloads, little-endian
    seed: int
    epoch: int
    optimizer: OptimizerSnapshot | None = None

    def to_params(self) -> ModelParams:
        tensors: "OrderedDict[str, Tensor]" = OrderedDict()
        for path, arr in self.arrays.items():
            tensors[path] = Tensor(arr.astype(np.float64), requires_grad=True)
        params = ModelParams(tensors)
        reference = init_model_params(self.config, seed=0)
        if params.paths() != reference.paths():
            raise CheckpointError("checkpoint parameter table does not match its config")
        for path, tensor in params.items():
            if tensor.shape != reference[path].shape:
                raise CheckpointError(
                    f"checkpoint parameter {path!r} has shape {tensor.shape}, "
                    f"config implies {reference[path].shape}"
                )
        return params


def checkpoint_from_params(
    cfg: ModelConfig,
    params: ModelParams,
    vocab: Vocabulary,
    seed: int,
    epoch: int,
    optimizer: AdamW | None = None,
) -> Checkpoint:
    arrays: "OrderedDict[str, np.ndarray]" = OrderedDict(
        (path, t.data.astype("<f4")) for path, t in params.items()
    )
    snapshot = None
    if optimizer is not None:
        snapshot = OptimizerSnapshot(
            t=optimizer.t,
            lr=optimizer.lr,
            beta1=optimizer.beta1,
            beta2=optimizer.beta2,
            eps=optimizer.eps,
            weight_decay=optimizer.weight_decay,
            m=OrderedDict((p, a.copy()) for p, a in optimizer.m.items()),
            v=OrderedDict((p, a.copy()) for p, a in optimizer.v.items()),
        )
    return Checkpoint(
        version=CHECKPOINT_VERSION,
        config=cfg,
        vocab_hash=vocab.content_hash(),
        arrays=arrays,
        seed=seed,
        epoch=epoch,
        optimizer=snapshot,
    )


# ---------------------------------------------------------------------------
# checkpoint serialization


def _write_record(buf: io.BytesIO, path: str, arr: np.ndarray, dtype: str) -> None:
    encoded = path.encode("utf-8")
    buf.write(struct.pack("<I", len(encoded)))
    buf.write(encoded)
    buf.write(struct.pack("<B", arr.ndim))
    for dim in arr.shape:
        buf.write(struct.pack("<I", dim))
    buf.write(np.ascontiguousarray(arr, dtype=dtype).tobytes())


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise CheckpointError("checkpoint file is truncated")
        chunk = self.blob[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u8(self) -> int:
        return struct.unpack("<B", self.take(1))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def f64(self) -> float:
        return struct.unpack("<d", self.take(8))[0]

    def record(self, dtype: str) -> tuple[str, np.ndarray]:
        path = self.take(self.u32()).decode("utf-8")
        rank = self.u8()
        if not 1 <= rank <= 3:
            raise CheckpointError(f"parameter {path!r} has invalid rank {rank}")
        shape = tuple(self.u32() for _ in range(rank))
        count = int(np.prod(shape))
        itemsize = np.dtype(dtype).itemsize
        data = np.frombuffer(self.take(count * itemsize), dtype=dtype).reshape(shape)
        return path, data


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    """Serialize and atomically replace ``path`` (temp file + rename)."""
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", ckpt.version))
    config_bytes = ckpt.config.to_text().encode("utf-8")
    buf.write(struct.pack("<I", len(config_bytes)))
    buf.write(config_bytes)
    if len(ckpt.vocab_hash) != 32:
        raise ContractError("vocabulary hash must be 32 bytes")
    buf.write(ckpt.vocab_hash)
    buf.write(struct.pack("<Q", ckpt.seed))
    buf.write(struct.pack("<I", ckpt.epoch))
    buf.write(struct.pack("<B", 1 if ckpt.optimizer is not None else 0))
    buf.write(struct.pack("<I", len(ckpt.arrays)))
    for name, arr in ckpt.arrays.items():
        _write_record(buf, name, arr, "<f4")
    if ckpt.optimizer is not None:
        opt = ckpt.optimizer
        buf.write(struct.pack("<Q", opt.t))
        for value in (opt.lr, opt.beta1, opt.beta2, opt.eps, opt.weight_decay):
            buf.write(struct.pack("<d", value))
        for table in (opt.m, opt.v):
            for name, arr in table.items():
                _write_record(buf, name, arr, "<f8")
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(buf.getvalue())
            os.replace(tmp_name, path)
        except BaseException:
            if os.path.exists(tmp_name):
                os.unlink(tmp_name)
            raise
    except OSError as exc:
        raise PersistenceError(f"cannot write checkpoint {path}: {exc}") from exc


def load_checkpoint(path, vocab: Vocabulary | None = None) -> Checkpoint:
    """Parse a checkpoint; if ``vocab`` is given its content hash must match."""
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"no checkpoint at {path}")
    reader = _Reader(path.read_bytes())
    if reader.take(4) != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path.name}: bad magic bytes, not a checkpoint")
    version = reader.u32()
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path.name}: unsupported format version {version}, expected {CHECKPOINT_VERSION}"
        )
    config_text = reader.take(reader.u32()).decode("utf-8")
    try:
        config = ModelConfig.from_text(config_text)
    except ConfigError as exc:
        raise CheckpointError(f"{path.name}: embedded config invalid: {exc}") from exc
    vocab_hash = reader.take(32)
    seed = reader.u64()
    epoch = reader.u32()
    has_optimizer = reader.u8()
    n_params = reader.u32()
    arrays: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for _ in range(n_params):
        name, data = reader.record("<f4")
        if name in arrays:
            raise CheckpointError(f"{path.name}: parameter {name!r} repeated")
        arrays[name] = data
    optimizer = None
    if has_optimizer:
        t = reader.u64()
        lr, beta1, beta2, eps, weight_decay = (reader.f64() for _ in range(5))

        def read_table():
            table: "OrderedDict[str, np.ndarray]" = OrderedDict()
            for _ in range(n_params):
                name, data = reader.record("<f8")
                if name not in arrays:
                    raise CheckpointError(f"{path.name}: optimizer table names unknown parameter {name!r}")
                table[name] = data.astype(np.float64)
            return table

        optimizer = OptimizerSnapshot(
            t=t, lr=lr, beta1=beta1, beta2=beta2, eps=eps, weight_decay=weight_decay,
            m=read_table(), v=read_table(),
        )
    if reader.pos != len(reader.blob):
        raise CheckpointError(f"{path.name}: {len(reader.blob) - reader.pos} trailing bytes")
    if vocab is not None and vocab.content_hash() != vocab_hash:
        raise CheckpointError(
            f"{path.name}: vocabulary hash mismatch, the checkpoint was trained with a different vocabulary"
        )
    return Checkpoint(
        version=version,
        config=config,
        vocab_hash=vocab_hash,
        arrays=arrays,
        seed=seed,
        epoch=epoch,
        optimizer=optimizer,
    )


# ---------------------------------------------------------------------------
# the epoch loop


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    params: ModelParams
    metric_lines: list[str]

    def metric_log(self) -> str:
        return "".join(line + "\n" for line in self.metric_lines)


def _chunks(items, size):
    for start in range(0, len(items), size):
        yield items[start : start + size]


def train(
    dataset: Dataset, model_cfg: ModelConfig, train_cfg: TrainConfig, vocab: Vocabulary
) -> TrainResult:
    """Run the epoch loop and return the final checkpoint plus the metric log.

    Per epoch: fresh negatives are resampled, gradients are averaged over
    each mini-batch, and one AdamW step is applied per batch.  The metric
    log carries one line per epoch with at least one triplet:
    ``epoch<TAB>mean_loss<TAB>dev_acc@1`` ("-" when dev evaluation is off).
    """
    dataset.validate()
    model_cfg.validate()
    if vocab.size != model_cfg.vocab_size:
        raise ConfigError(
            f"vocabulary size {vocab.size} does not match config vocab_size {model_cfg.vocab_size}"
        )
    loss_cfg = LossConfig(train_cfg.margin)
    params = init_model_params(model_cfg, train_cfg.seed)
    optimizer = AdamW(
        params,
        lr=train_cfg.lr,
        beta1=train_cfg.beta1,
        beta2=train_cfg.beta2,
        eps=train_cfg.eps,
        weight_decay=train_cfg.weight_decay,
    )

    train_qids = dataset.split_questions("train")
    if train_cfg.train_fraction < 1.0 and train_qids:
        keep = max(1, int(round(train_cfg.train_fraction * len(train_qids))))
        subsample_rng = np.random.default_rng([train_cfg.seed, 0x5E1EC7])
        picked = sorted(subsample_rng.choice(len(train_qids), size=keep, replace=False))
        train_qids = [train_qids[i] for i in picked]

    # Texts are fixed for the whole run, so encode once.
    question_seqs = {}
    answer_seqs = {}
    for qid in train_qids:
        q_seq, _ = encode_pair(dataset.questions[qid], "", vocab, model_cfg)
        question_seqs[qid] = q_seq
    for aid, answer in dataset.answers.items():
        _, a_seq = encode_pair("", answer.text, vocab, model_cfg)
        answer_seqs[aid] = a_seq

    dev_pools = None
    if train_cfg.eval_dev and dataset.splits["dev"]:
        dev_pools = build_pools(dataset, train_cfg.pool_size, train_cfg.seed, split="dev")

    metric_lines: list[str] = []
    for epoch in range(1, train_cfg.epochs + 1):
        epoch_rng = np.random.default_rng([train_cfg.seed, epoch])
        triplets = sample_triplets(dataset, epoch_rng, train_qids)
        if not triplets:
            continue
        epoch_losses: list[float] = []
        for batch in _chunks(triplets, train_cfg.batch_size):
            optimizer.zero_grad()
            with ComputationTape() as tape:
                total = None
                for triplet in batch:
                    try:
                        loss = triplet_loss_node(
                            question_seqs[triplet.question_id],
                            answer_seqs[triplet.positive_answer_id],
                            answer_seqs[triplet.negative_answer_id],
                            model_cfg,
                            params,
                            loss_cfg,
                        )
                    except NumericsError as exc:
                        raise NumericsError(
                            f"non-finite loss at triplet ({triplet.question_id}, "
                            f"{triplet.positive_answer_id}, {triplet.negative_answer_id}): {exc}"
                        ) from exc
                    epoch_losses.append(loss.item())
                    total = loss if total is None else tt.add(total, loss)
                batch_loss = tt.scale(total, 1.0 / len(batch))
            backward(batch_loss, tape)
            optimizer.step()
        mean_loss = float(np.mean(epoch_losses))
        if dev_pools is not None:
            matcher = Matcher(model_cfg, params, vocab)
            score = dataset_scorer(dataset, matcher.similarity)
            report = evaluate_pools(dev_pools, score, ks=(1,))
            dev_col = f"{report.accuracy(1):.6f}"
        else:
            dev_col = "-"
        metric_lines.append(f"{epoch}\t{mean_loss:.10g}\t{dev_col}")

    checkpoint = checkpoint_from_params(
        model_cfg,
        params,
        vocab,
        seed=train_cfg.seed,
        epoch=train_cfg.epochs,
        optimizer=optimizer if train_cfg.keep_optimizer else None,
    )
    return TrainResult(checkpoint=checkpoint, params=params, metric_lines=metric_lines)
