"""Command-line surface: train, eval, score, gen-data, gradcheck.

Exit codes: 0 success, 1 rejected input (bad flags, bad files, bad
config), 2 internal error.  Every run is reproducible from its flags:
all randomness is derived from the --seed values.

``--config FILE`` reads canonical ``key=value`` lines (the same keys as
the long flags, with underscores); explicit flags override file values.
A trained checkpoint ``model.qamc`` is accompanied by ``model.qamc.vocab``
(the vocabulary file) and ``model.qamc.metrics`` (the per-epoch log).
"""

from __future__ import annotations

import argparse
import os
import sys
import tempfile
from dataclasses import dataclass, fields
from pathlib import Path

from .data import SyntheticSpec, generate_synthetic, load_dataset, save_dataset, summarize
from .encoders import CnnHeadConfig, CrossSchedule, EncoderConfig, GruHeadConfig, PoolingStrategy
from .errors import (
    CheckpointError,
    ConfigError,
    DatasetError,
    InputError,
    PersistenceError,
    QamatchError,
)
from .evaluation import build_pools, dataset_scorer, evaluate_pools, load_pools
from .gradcheck import check_model_gradients, gradcheck_vocab_size
from .matching import Matcher, ModelConfig, SegmentScheme, Variant
from .text import Vocabulary, build_vocab
from .training import TrainConfig, load_checkpoint, save_checkpoint, train

_INPUT_ERRORS = (InputError, ConfigError, DatasetError, CheckpointError, PersistenceError)


class _UsageError(QamatchError):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on bad flags; the contract here is usage text + exit 1
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(message)


@dataclass
class RunConfig:
    """Every knob of a training run; canonical text form round-trips."""

    arch: str = Variant.CROSSED_BERT_SIAMESE.value
    hidden: int = 32
    layers: int = 1
    heads: int = 2
    ffn_dim: int = 64
    max_len: int = 16
    kernel_sizes: str = "2,3"
    feature_maps: int = 8
    gru_hidden: int = 8
    pooling: str = PoolingStrategy.MEAN_USEFUL_TOKEN.value
    cross_layers: str = CrossSchedule.EVERY_LAYER.value
    segments: str = SegmentScheme.SHARED.value
    lr: float = 1e-3
    margin: float = 0.1
    weight_decay: float = 0.01
    epochs: int = 20
    batch: int = 16
    seed: int = 0
    train_fraction: float = 1.0
    eval_dev: bool = False
    pool_size: int = 10
    save_optimizer: bool = False

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{f.name}={value}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        values = _parse_config_text(text)
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            kwargs[key] = _coerce(raw, known[key].type)
        return cls(**kwargs)

    def model_config(self, vocab_size: int) -> ModelConfig:
        variant = Variant(self.arch)
        encoder = EncoderConfig(
            dim=self.hidden,
            layers=self.layers,
            heads=self.heads,
            ffn_dim=self.ffn_dim,
            mode="siamese" if variant is Variant.SIAMESE_BERT else "crossed",
            cross_schedule=CrossSchedule(self.cross_layers),
        )
        cnn = gru = None
        if variant is Variant.CROSSED_BERT_MULTI_SCALE_CNN:
            cnn = CnnHeadConfig(kernel_sizes=_parse_kernel_sizes(self.kernel_sizes), feature_maps=self.feature_maps)
        if variant is Variant.CROSSED_BERT_BIGRU:
            gru = GruHeadConfig(hidden=self.gru_hidden)
        return ModelConfig(
            variant=variant,
            encoder=encoder,
            max_len=self.max_len,
            vocab_size=vocab_size,
            pooling=PoolingStrategy(self.pooling),
            cnn=cnn,
            gru=gru,
            segments=SegmentScheme(self.segments),
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            lr=self.lr,
            margin=self.margin,
            batch_size=self.batch,
            weight_decay=self.weight_decay,
            seed=self.seed,
            train_fraction=self.train_fraction,
            eval_dev=self.eval_dev,
            pool_size=self.pool_size,
            keep_optimizer=self.save_optimizer,
        )


def _coerce(raw: str, annotation) -> object:
    text = str(annotation)
    if "bool" in text:
        if raw not in ("true", "false"):
            raise ConfigError(f"boolean config values must be true/false, got {raw!r}")
        return raw == "true"
    if "int" in text:
        return int(raw)
    if "float" in text:
        return float(raw)
    return raw


def _parse_config_text(text: str) -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno} is not key=value: {line!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if key in values:
            raise ConfigError(f"config key {key!r} repeated")
        values[key] = value.strip()
    return values


def _parse_kernel_sizes(raw: str) -> tuple[int, ...]:
    try:
        return tuple(int(part) for part in raw.split(",") if part)
    except ValueError:
        raise InputError(f"kernel sizes must be comma-separated integers, got {raw!r}") from None


def _config_file_tokens(argv: list[str]) -> list[str]:
    """Expand ``--config FILE`` into flag tokens that precede the user's flags."""
    if "--config" not in argv:
        return argv
    idx = argv.index("--config")
    if idx + 1 >= len(argv):
        raise InputError("--config needs a file path")
    path = Path(argv[idx + 1])
    if not path.is_file():
        raise InputError(f"config file not found: {path}")
    tokens: list[str] = []
    for key, value in _parse_config_text(path.read_text(encoding="utf-8")).items():
        flag = "--" + key.replace("_", "-")
        if value in ("true", "false"):
            if value == "true":
                tokens.append(flag)
        else:
            tokens.extend([flag, value])
    rest = argv[:idx] + argv[idx + 2 :]
    if not rest:
        return tokens
    # insert after the subcommand so explicit flags win
    return rest[:1] + tokens + rest[1:]


def _write_text_atomic(path: Path, text: str) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp_name, path)
    except OSError as exc:
        raise PersistenceError(f"cannot write {path}: {exc}") from exc


def _add_model_flags(parser: argparse.ArgumentParser) -> None:
    defaults = RunConfig()
    parser.add_argument("--arch", choices=[v.value for v in Variant], default=defaults.arch)
    parser.add_argument("--hidden", type=int, default=defaults.hidden)
    parser.add_argument("--layers", type=int, default=defaults.layers)
    parser.add_argument("--heads", type=int, default=defaults.heads)
    parser.add_argument("--ffn-dim", type=int, default=defaults.ffn_dim)
    parser.add_argument("--max-len", type=int, default=defaults.max_len)
    parser.add_argument("--kernel-sizes", default=defaults.kernel_sizes)
    parser.add_argument("--feature-maps", type=int, default=defaults.feature_maps)
    parser.add_argument("--gru-hidden", type=int, default=defaults.gru_hidden)
    parser.add_argument(
        "--pooling", choices=[p.value for p in PoolingStrategy], default=defaults.pooling
    )
    parser.add_argument(
        "--cross-layers", choices=[c.value for c in CrossSchedule], default=defaults.cross_layers
    )
    parser.add_argument(
        "--segments", choices=[s.value for s in SegmentScheme], default=defaults.segments
    )


def build_parser() -> _Parser:
    parser = _Parser(prog="qamatch", description="Character-level question-answer matching")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    defaults = RunConfig()
    p_train = sub.add_parser("train", parents=[], help="train a model")
    p_train.add_argument("--config", help="key=value file; explicit flags override")
    p_train.add_argument("--data-dir", required=True)
    _add_model_flags(p_train)
    p_train.add_argument("--lr", type=float, default=defaults.lr)
    p_train.add_argument("--margin", type=float, default=defaults.margin)
    p_train.add_argument("--weight-decay", type=float, default=defaults.weight_decay)
    p_train.add_argument("--epochs", type=int, default=defaults.epochs)
    p_train.add_argument("--batch", type=int, default=defaults.batch)
    p_train.add_argument("--seed", type=int, default=defaults.seed)
    p_train.add_argument("--train-fraction", type=float, default=defaults.train_fraction)
    p_train.add_argument("--eval-dev", action="store_true")
    p_train.add_argument("--pool-size", type=int, default=defaults.pool_size)
    p_train.add_argument("--save-optimizer", action="store_true")
    p_train.add_argument("--checkpoint-out", default="checkpoint.qamc")
    p_train.add_argument("--metrics-out", help="default: CHECKPOINT_OUT.metrics")

    p_eval = sub.add_parser("eval", help="rank candidate pools and report ACC@K")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--data-dir", required=True)
    p_eval.add_argument("--pool-size", type=int, default=100)
    p_eval.add_argument("--k", default="1", help="comma-separated cutoffs, e.g. 1,5,10")
    p_eval.add_argument("--split", choices=["train", "dev", "test"], default="dev")
    p_eval.add_argument("--seed", type=int, default=0)
    p_eval.add_argument("--pools-file", help="CSV question_id,candidate_id,label")
    p_eval.add_argument("--vocab", help="default: CHECKPOINT.vocab")

    p_score = sub.add_parser("score", help="similarity of one question-answer pair")
    p_score.add_argument("--checkpoint", required=True)
    p_score.add_argument("--question", required=True)
    p_score.add_argument("--answer", required=True)
    p_score.add_argument("--vocab", help="default: CHECKPOINT.vocab")

    p_gen = sub.add_parser("gen-data", help="generate a synthetic corpus")
    p_gen.add_argument("--questions", type=int, default=30)
    p_gen.add_argument("--answers-per-q", type=int, default=2)
    p_gen.add_argument("--vocab-chars", type=int, default=40)
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--out", required=True)

    p_grad = sub.add_parser("gradcheck", help="finite-difference check of all gradients")
    p_grad.add_argument("--config", help="key=value file; explicit flags override")
    _add_model_flags(p_grad)
    p_grad.add_argument("--seed", type=int, default=0)
    p_grad.add_argument("--step", type=float, default=1e-5, help="finite-difference step")
    p_grad.add_argument("--tolerance", type=float, default=1e-4)

    return parser


def _run_config_from_args(args) -> RunConfig:
    kwargs = {}
    for f in fields(RunConfig):
        if hasattr(args, f.name):
            kwargs[f.name] = getattr(args, f.name)
    return RunConfig(**kwargs)


def _load_matcher(checkpoint_path: str, vocab_path: str | None) -> Matcher:
    vocab_file = Path(vocab_path) if vocab_path else Path(str(checkpoint_path) + ".vocab")
    if not vocab_file.is_file():
        raise InputError(f"vocabulary file not found: {vocab_file}")
    vocab = Vocabulary.load(vocab_file)
    ckpt = load_checkpoint(checkpoint_path, vocab=vocab)
    return Matcher(ckpt.config, ckpt.to_params(), vocab)


def _cmd_train(args) -> int:
    run_cfg = _run_config_from_args(args)
    dataset = load_dataset(args.data_dir)
    train_qids = dataset.split_questions("train")
    corpus = [dataset.questions[qid] for qid in train_qids]
    for qid in train_qids:
        corpus.extend(dataset.answers[aid].text for aid in dataset.answers_of(qid))
    vocab = build_vocab(corpus)
    model_cfg = run_cfg.model_config(vocab.size)
    result = train(dataset, model_cfg, run_cfg.train_config(), vocab)
    for line in result.metric_lines:
        print(line)
    out = Path(args.checkpoint_out)
    save_checkpoint(out, result.checkpoint)
    vocab.save(Path(str(out) + ".vocab"))
    metrics_path = Path(args.metrics_out) if args.metrics_out else Path(str(out) + ".metrics")
    _write_text_atomic(metrics_path, result.metric_log())
    print(f"checkpoint written to {out}")
    return 0


def _cmd_eval(args) -> int:
    matcher = _load_matcher(args.checkpoint, args.vocab)
    dataset = load_dataset(args.data_dir)
    if args.pools_file:
        pools = load_pools(args.pools_file)
    else:
        pools = build_pools(dataset, args.pool_size, args.seed, split=args.split)
    if not pools:
        raise InputError(f"split {args.split!r} has no questions to evaluate")
    ks = tuple(int(part) for part in str(args.k).split(",") if part)
    if not ks:
        raise InputError(f"no valid cutoffs in --k {args.k!r}")
    score = dataset_scorer(dataset, matcher.similarity)
    report = evaluate_pools(pools, score, ks=ks)
    sys.stdout.write(report.render())
    return 0


def _cmd_score(args) -> int:
    matcher = _load_matcher(args.checkpoint, args.vocab)
    print(f"{matcher.similarity(args.question, args.answer):.10f}")
    return 0


def _cmd_gen_data(args) -> int:
    spec = SyntheticSpec(
        n_questions=args.questions,
        answers_per_q=args.answers_per_q,
        vocab_chars=args.vocab_chars,
        seed=args.seed,
    )
    dataset = generate_synthetic(spec)
    save_dataset(dataset, args.out)
    stats = summarize(dataset)
    print(
        f"wrote {stats['total']['questions']} questions, {stats['total']['answers']} answers "
        f"to {args.out} (train {stats['train']['questions']}, dev {stats['dev']['questions']}, "
        f"test {stats['test']['questions']})"
    )
    return 0


def _cmd_gradcheck(args) -> int:
    run_cfg = _run_config_from_args(args)
    cfg = run_cfg.model_config(gradcheck_vocab_size())
    worst = check_model_gradients(cfg, seed=args.seed, h=args.step)
    print(f"max relative error {worst:.3e} (tolerance {args.tolerance:.0e})")
    if worst < args.tolerance:
        print("gradcheck PASS")
        return 0
    print("gradcheck FAIL")
    return 1


_COMMANDS = {
    "train": _cmd_train,
    "eval": _cmd_eval,
    "score": _cmd_score,
    "gen-data": _cmd_gen_data,
    "gradcheck": _cmd_gradcheck,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        argv = _config_file_tokens(argv)
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_usage(sys.stderr)
            print("error: a command is required", file=sys.stderr)
            return 1
        return _COMMANDS[args.command](args)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except _INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SystemExit:
        raise
    except Exception as exc:  # QamatchError contract violations included
        print(f"internal error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
