"""Candidate-pool ranking and top-K retrieval accuracy.

A question counts as a hit at K when ANY of its relevant answers appears
among the K highest-scoring candidates.  Ranking is deterministic:
descending similarity, ties broken by ascending candidate id.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .data import Dataset
from .errors import InputError

Scorer = Callable[[str, str], float]


@dataclass(frozen=True)
class EvalPool:
    """One question with its candidate answers and relevance labels."""

    question_id: str
    candidate_ids: tuple[str, ...]
    relevant_ids: frozenset[str]

    def __post_init__(self):
        object.__setattr__(self, "candidate_ids", tuple(self.candidate_ids))
        object.__setattr__(self, "relevant_ids", frozenset(self.relevant_ids))
        if not self.candidate_ids:
            raise InputError(f"pool for {self.question_id!r} has no candidates")
        if len(set(self.candidate_ids)) != len(self.candidate_ids):
            raise InputError(f"pool for {self.question_id!r} has duplicate candidates")
        if not self.relevant_ids:
            raise InputError(f"pool for {self.question_id!r} has no relevant answers")
        if not self.relevant_ids <= set(self.candidate_ids):
            raise InputError(f"pool for {self.question_id!r}: relevant ids missing from candidates")

    @property
    def size(self) -> int:
        return len(self.candidate_ids)


def rank_pool(pool: EvalPool, score: Scorer) -> list[str]:
    """Candidates sorted by descending score, then ascending candidate id."""
    scored = [(-score(pool.question_id, cid), cid) for cid in pool.candidate_ids]
    scored.sort()
    return [cid for _, cid in scored]


def hits_at_k(pools: Sequence[EvalPool], rankings: Sequence[Sequence[str]], k: int) -> int:
    if len(pools) != len(rankings):
        raise InputError(f"{len(pools)} pools but {len(rankings)} rankings")
    if not pools:
        raise InputError("no pools to evaluate")
    max_size = max(pool.size for pool in pools)
    if not 1 <= k <= max_size:
        raise InputError(f"K={k} outside [1, {max_size}]")
    hits = 0
    for pool, ranking in zip(pools, rankings):
        top = set(ranking[:k])
        if top & pool.relevant_ids:
            hits += 1
    return hits


def acc_at_k(pools: Sequence[EvalPool], rankings: Sequence[Sequence[str]], k: int) -> float:
    """Fraction of questions with a relevant answer in their top K."""
    return hits_at_k(pools, rankings, k) / len(pools)


@dataclass
class EvalReport:
    n: int
    table: dict[int, tuple[int, float]]  # K -> (hits, accuracy)
    rankings: list[list[str]] | None = None

    def accuracy(self, k: int) -> float:
        return self.table[k][1]

    def exact(self, k: int) -> Fraction:
        hits, _ = self.table[k]
        return Fraction(hits, self.n)

    def render(self) -> str:
        lines = [f"{k}\t{acc:.6f}" for k, (_, acc) in sorted(self.table.items())]
        lines.append(f"N\t{self.n}")
        return "\n".join(lines) + "\n"


def evaluate_pools(
    pools: Sequence[EvalPool],
    score: Scorer,
    ks: Iterable[int] = (1,),
    keep_rankings: bool = False,
) -> EvalReport:
    rankings = [rank_pool(pool, score) for pool in pools]
    table = {k: (hits_at_k(pools, rankings, k), acc_at_k(pools, rankings, k)) for k in ks}
    return EvalReport(n=len(pools), table=table, rankings=rankings if keep_rankings else None)


def build_pools(
    dataset: Dataset, pool_size: int, seed: int, split: str = "dev"
) -> list[EvalPool]:
    """One pool per split question: linked answers plus seeded random distractors."""
    if pool_size < 1:
        raise InputError(f"pool size must be positive, got {pool_size}")
    if len(dataset.answers) < pool_size:
        raise InputError(
            f"pool size {pool_size} exceeds the {len(dataset.answers)} answers available"
        )
    all_answers = sorted(dataset.answers)
    rng = np.random.default_rng([seed, 0x9001])
    pools = []
    for qid in dataset.split_questions(split):
        linked = dataset.answers_of(qid)
        if len(linked) > pool_size:
            raise InputError(
                f"question {qid!r} has {len(linked)} linked answers, more than pool size {pool_size}"
            )
        linked_set = set(linked)
        others = [aid for aid in all_answers if aid not in linked_set]
        need = pool_size - len(linked)
        if need > len(others):
            raise InputError(f"not enough distractors for question {qid!r}")
        picked = rng.choice(len(others), size=need, replace=False) if need else []
        distractors = [others[i] for i in sorted(picked)]
        pools.append(
            EvalPool(
                question_id=qid,
                candidate_ids=tuple(linked + distractors),
                relevant_ids=frozenset(linked),
            )
        )
    return pools


def load_pools(path) -> list[EvalPool]:
    """Ingest a pool file: CSV ``question_id,candidate_id,label`` with label 0/1."""
    path = Path(path)
    if not path.is_file():
        raise InputError(f"missing pools file: {path}")
    grouped: dict[str, tuple[list[str], set[str]]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["question_id", "candidate_id", "label"]:
            raise InputError(f"{path.name}: expected header question_id,candidate_id,label")
        for lineno, fields in enumerate(reader, start=2):
            if len(fields) != 3:
                raise InputError(f"{path.name} row {lineno}: expected 3 fields")
            qid, cid, label = fields
            if label not in ("0", "1"):
                raise InputError(f"{path.name} row {lineno}: label must be 0 or 1, got {label!r}")
            candidates, relevant = grouped.setdefault(qid, ([], set()))
            candidates.append(cid)
            if label == "1":
                relevant.add(cid)
    pools = []
    for qid, (candidates, relevant) in grouped.items():
        pools.append(EvalPool(question_id=qid, candidate_ids=tuple(candidates), relevant_ids=frozenset(relevant)))
    return pools


def dataset_scorer(dataset: Dataset, similarity: Callable[[str, str], float]) -> Scorer:
    """Adapt a text-pair similarity to score (question_id, answer_id) pairs."""

    def score(question_id: str, answer_id: str) -> float:
        return similarity(dataset.questions[question_id], dataset.answers[answer_id].text)

    return score
