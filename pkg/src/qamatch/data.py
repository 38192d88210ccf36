"""Dataset ingestion, the synthetic desk-scale corpus, and summary statistics.

The on-disk layout is three UTF-8 CSV files plus one id-per-line split
files:

* ``questions.csv``   header ``question_id,content``
* ``answers.csv``     header ``ans_id,question_id,content``
* ``train.txt`` / ``dev.txt`` / ``test.txt``

The synthetic generator plants a lexical-overlap signal: each question
owns a distinct pair of "topic" characters that recur in the question
and in its linked answers, while filler characters are random.  A plain
bag-of-characters scorer can already recover the pairing, so a trained
model at desk scale has something real to learn.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path

import numpy as np

from .errors import DatasetError, InputError

SPLIT_NAMES = ("train", "dev", "test")


class MissingDataFile(DatasetError):
    pass


class MalformedRow(DatasetError):
    pass


class DanglingReference(DatasetError):
    pass


class DuplicateId(DatasetError):
    pass


@dataclass(frozen=True)
class Answer:
    text: str
    question_id: str


@dataclass
class Dataset:
    questions: dict[str, str]
    answers: dict[str, Answer]
    splits: dict[str, list[str]]
    _linked: dict[str, list[str]] = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        for name in SPLIT_NAMES:
            self.splits.setdefault(name, [])
        self._reindex()

    def _reindex(self) -> None:
        index: dict[str, list[str]] = {qid: [] for qid in self.questions}
        for aid in sorted(self.answers):
            qid = self.answers[aid].question_id
            if qid in index:
                index[qid].append(aid)
        self._linked = index

    def answers_of(self, question_id: str) -> list[str]:
        """Ids of the answers linked to a question, in ascending id order."""
        try:
            return list(self._linked[question_id])
        except KeyError:
            raise DatasetError(f"unknown question id {question_id!r}") from None

    def split_questions(self, name: str) -> list[str]:
        if name not in SPLIT_NAMES:
            raise InputError(f"unknown split {name!r}, expected one of {SPLIT_NAMES}")
        return list(self.splits[name])

    def all_texts(self) -> list[str]:
        return list(self.questions.values()) + [a.text for a in self.answers.values()]

    def validate(self) -> None:
        for aid, answer in self.answers.items():
            if answer.question_id not in self.questions:
                raise DanglingReference(
                    f"answer {aid!r} references unknown question {answer.question_id!r}"
                )
        seen: dict[str, str] = {}
        for name in SPLIT_NAMES:
            for qid in self.splits[name]:
                if qid not in self.questions:
                    raise DanglingReference(f"split {name!r} lists unknown question {qid!r}")
                if qid in seen:
                    raise DatasetError(f"question {qid!r} appears in splits {seen[qid]!r} and {name!r}")
                seen[qid] = name
                if not self._linked[qid]:
                    raise DatasetError(f"split question {qid!r} has no linked answer")


def _read_csv(path: Path, expected_header: list[str]) -> list[tuple[int, list[str]]]:
    if not path.is_file():
        raise MissingDataFile(f"missing file: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MalformedRow(f"{path.name}: empty file, expected header {expected_header}") from None
        if header != expected_header:
            raise MalformedRow(f"{path.name}: header {header} != expected {expected_header}")
        rows = []
        for lineno, fields in enumerate(reader, start=2):
            if len(fields) != len(expected_header):
                raise MalformedRow(
                    f"{path.name} row {lineno}: expected {len(expected_header)} fields, got {len(fields)}"
                )
            rows.append((lineno, fields))
    return rows


def load_dataset(directory) -> Dataset:
    """Parse and validate the CSV/split layout under ``directory``."""
    directory = Path(directory)
    questions: dict[str, str] = {}
    for lineno, (qid, content) in _read_csv(directory / "questions.csv", ["question_id", "content"]):
        if qid in questions:
            raise DuplicateId(f"questions.csv row {lineno}: duplicate question id {qid!r}")
        questions[qid] = content
    answers: dict[str, Answer] = {}
    for lineno, (aid, qid, content) in _read_csv(
        directory / "answers.csv", ["ans_id", "question_id", "content"]
    ):
        if aid in answers:
            raise DuplicateId(f"answers.csv row {lineno}: duplicate answer id {aid!r}")
        if qid not in questions:
            raise DanglingReference(
                f"answers.csv row {lineno}: unknown question id {qid!r}"
            )
        answers[aid] = Answer(text=content, question_id=qid)
    splits: dict[str, list[str]] = {}
    for name in SPLIT_NAMES:
        path = directory / f"{name}.txt"
        if not path.is_file():
            raise MissingDataFile(f"missing file: {path}")
        ids = [line for line in path.read_text(encoding="utf-8").splitlines() if line]
        splits[name] = ids
    dataset = Dataset(questions=questions, answers=answers, splits=splits)
    dataset.validate()
    return dataset


def save_dataset(dataset: Dataset, directory) -> None:
    """Write the CSV/split layout; load_dataset of the result is the identity."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / "questions.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["question_id", "content"])
        for qid, content in dataset.questions.items():
            writer.writerow([qid, content])
    with open(directory / "answers.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["ans_id", "question_id", "content"])
        for aid, answer in dataset.answers.items():
            writer.writerow([aid, answer.question_id, answer.text])
    for name in SPLIT_NAMES:
        with open(directory / f"{name}.txt", "w", encoding="utf-8") as fh:
            for qid in dataset.splits[name]:
                fh.write(qid + "\n")


@dataclass(frozen=True)
class SyntheticSpec:
    n_questions: int
    answers_per_q: int
    vocab_chars: int
    seed: int
    dev_fraction: float = 0.2

    def __post_init__(self):
        if self.vocab_chars < 10:
            raise InputError(f"need at least 10 vocabulary characters, got {self.vocab_chars}")
        if self.n_questions < 1 or self.answers_per_q < 1:
            raise InputError("need at least one question and one answer per question")
        if not 0.0 <= self.dev_fraction < 1.0:
            raise InputError(f"dev_fraction must lie in [0, 1), got {self.dev_fraction}")


def _mixed_text(rng, topic_chars, filler_pool, content_len, topic_share=0.55) -> str:
    topic_count = max(4, int(round(content_len * topic_share)))
    topic_count = min(topic_count, content_len)
    chars = [topic_chars[i % 2] for i in range(topic_count)]
    chars += [filler_pool[i] for i in rng.integers(0, len(filler_pool), content_len - topic_count)]
    order = rng.permutation(len(chars))
    return "".join(chars[i] for i in order)


def generate_synthetic(spec: SyntheticSpec) -> Dataset:
    """Deterministic corpus where questions and their answers share a topic pair."""
    alphabet = [chr(0x4E00 + i) for i in range(spec.vocab_chars)]
    n_topic = max(4, spec.vocab_chars // 3)
    topic_pool = alphabet[:n_topic]
    filler_pool = alphabet[n_topic:]
    pairs = list(combinations(range(n_topic), 2))
    if len(pairs) < spec.n_questions:
        raise InputError(
            f"{spec.n_questions} questions need {spec.n_questions} topic clusters, but "
            f"{spec.vocab_chars} characters only support {len(pairs)}"
        )
    rng = np.random.default_rng(spec.seed)
    chosen = rng.choice(len(pairs), spec.n_questions, replace=False)

    questions: dict[str, str] = {}
    answers: dict[str, Answer] = {}
    answer_counter = 0
    for qi in range(spec.n_questions):
        first, second = pairs[chosen[qi]]
        topic = (topic_pool[first], topic_pool[second])
        qid = f"q{qi:04d}"
        questions[qid] = _mixed_text(rng, topic, filler_pool, int(rng.integers(6, 14)))
        for _ in range(spec.answers_per_q):
            aid = f"a{answer_counter:04d}"
            answer_counter += 1
            answers[aid] = Answer(
                text=_mixed_text(rng, topic, filler_pool, int(rng.integers(8, 15))),
                question_id=qid,
            )

    qids = list(questions)
    dev_count = int(round(spec.dev_fraction * spec.n_questions)) if spec.n_questions >= 5 else 0
    order = rng.permutation(spec.n_questions)
    dev = [qids[i] for i in order[:dev_count]]
    train = [qids[i] for i in order[dev_count:]]
    dataset = Dataset(questions=questions, answers=answers, splits={"train": train, "dev": dev, "test": []})
    dataset.validate()
    return dataset


def summarize(dataset: Dataset) -> dict[str, dict[str, float]]:
    """Per-split and total counts with mean characters per question/answer."""
    report: dict[str, dict[str, float]] = {}

    def stats(qids):
        q_lengths = [len(dataset.questions[qid]) for qid in qids]
        a_lengths = [
            len(dataset.answers[aid].text) for qid in qids for aid in dataset.answers_of(qid)
        ]
        return {
            "questions": len(q_lengths),
            "answers": len(a_lengths),
            "avg_question_chars": float(np.mean(q_lengths)) if q_lengths else 0.0,
            "avg_answer_chars": float(np.mean(a_lengths)) if a_lengths else 0.0,
        }

    for name in SPLIT_NAMES:
        report[name] = stats(dataset.splits[name])
    report["total"] = stats(list(dataset.questions))
    return report
