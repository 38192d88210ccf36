"""Pool ranking, ACC@K, and pool construction."""

from fractions import Fraction

import numpy as np
import pytest

from qamatch.data import Answer, Dataset
from qamatch.errors import InputError
from qamatch.evaluation import (
    EvalPool,
    acc_at_k,
    build_pools,
    dataset_scorer,
    evaluate_pools,
    hits_at_k,
    load_pools,
    rank_pool,
)


def pool_of(qid, candidates, relevant):
    return EvalPool(question_id=qid, candidate_ids=tuple(candidates), relevant_ids=frozenset(relevant))


def brute_force_hits(pools, score, k):
    """Independent score-then-sort recomputation."""
    hits = 0
    for pool in pools:
        scored = sorted(pool.candidate_ids, key=lambda cid: (-score(pool.question_id, cid), cid))
        if any(cid in pool.relevant_ids for cid in scored[:k]):
            hits += 1
    return hits


class TestRankPool:
    def test_singleton_pool(self):
        pool = pool_of("q", ["a1"], ["a1"])
        assert rank_pool(pool, lambda q, c: 0.3) == ["a1"]

    def test_tie_broken_by_ascending_id(self):
        pool = pool_of("q", ["a2", "a1"], ["a1"])
        assert rank_pool(pool, lambda q, c: 0.5) == ["a1", "a2"]

    def test_invariant_to_candidate_order(self):
        rng = np.random.default_rng(0)
        scores = {f"a{i}": float(rng.uniform()) for i in range(8)}
        ids = list(scores)
        pool1 = pool_of("q", ids, [ids[0]])
        pool2 = pool_of("q", ids[::-1], [ids[0]])
        score = lambda q, c: scores[c]
        assert rank_pool(pool1, score) == rank_pool(pool2, score)

    def test_matches_independent_score_then_sort(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            ids = [f"a{i:02d}" for i in range(12)]
            scores = {cid: float(rng.uniform(-1, 1)) for cid in ids}
            pool = pool_of("q", ids, [ids[3]])
            expected = sorted(ids, key=lambda cid: (-scores[cid], cid))
            assert rank_pool(pool, lambda q, c: scores[c]) == expected

    def test_empty_pool_rejected(self):
        with pytest.raises(InputError):
            pool_of("q", [], [])

    def test_duplicate_candidates_rejected(self):
        with pytest.raises(InputError):
            pool_of("q", ["a1", "a1"], ["a1"])

    def test_relevant_must_be_candidates(self):
        with pytest.raises(InputError):
            pool_of("q", ["a1"], ["a2"])


class TestAccAtK:
    def test_two_of_three_ranked_first(self):
        pools = [pool_of(f"q{i}", ["a", "b"], ["a"]) for i in range(3)]
        rankings = [["a", "b"], ["a", "b"], ["b", "a"]]
        assert acc_at_k(pools, rankings, 1) == pytest.approx(2 / 3)

    def test_full_depth_is_total(self):
        pools = [pool_of(f"q{i}", ["a", "b", "c"], ["c"]) for i in range(4)]
        rankings = [["a", "b", "c"]] * 4
        assert acc_at_k(pools, rankings, 3) == 1.0

    def test_monotone_in_k(self):
        rng = np.random.default_rng(2)
        ids = [f"a{i:02d}" for i in range(10)]
        pools, rankings = [], []
        for i in range(15):
            relevant = rng.choice(ids, size=2, replace=False)
            pools.append(pool_of(f"q{i}", ids, relevant))
            rankings.append(list(rng.permutation(ids)))
        accs = [acc_at_k(pools, rankings, k) for k in range(1, 11)]
        assert all(a <= b for a, b in zip(accs, accs[1:]))
        assert accs[-1] == 1.0

    def test_any_relevant_counts_as_hit(self):
        pools = [pool_of("q", ["a", "b", "c"], ["b", "c"])]
        assert acc_at_k(pools, [["c", "a", "b"]], 1) == 1.0

    def test_k_out_of_range(self):
        pools = [pool_of("q", ["a", "b"], ["a"])]
        with pytest.raises(InputError):
            acc_at_k(pools, [["a", "b"]], 0)
        with pytest.raises(InputError):
            acc_at_k(pools, [["a", "b"]], 3)

    def test_matches_brute_force_on_random_fixtures(self):
        rng = np.random.default_rng(3)
        ids = [f"a{i:03d}" for i in range(20)]
        pools = []
        scores = {}
        for i in range(20):
            relevant = [str(r) for r in rng.choice(ids, size=int(rng.integers(1, 3)), replace=False)]
            pools.append(pool_of(f"q{i:03d}", ids, relevant))
            for cid in ids:
                scores[(f"q{i:03d}", cid)] = float(rng.normal())
        score = lambda q, c: scores[(q, c)]
        report = evaluate_pools(pools, score, ks=(1, 2, 5))
        for k in (1, 2, 5):
            assert report.exact(k) == Fraction(brute_force_hits(pools, score, k), len(pools))

    def test_equal_scores_hit_iff_smallest_id_relevant(self):
        # deterministic tie rule makes the expected accuracy exact
        pools = [
            pool_of("q1", ["a1", "a2", "a3"], ["a1"]),  # smallest id relevant -> hit
            pool_of("q2", ["b1", "b2", "b3"], ["b2"]),  # not smallest -> miss
            pool_of("q3", ["c0", "c5"], ["c0"]),  # hit
            pool_of("q4", ["d1", "d2"], ["d2"]),  # miss
        ]
        report = evaluate_pools(pools, lambda q, c: 0.0, ks=(1,))
        assert report.exact(1) == Fraction(2, 4)

    def test_report_render_format(self):
        pools = [pool_of("q", ["a", "b"], ["a"])]
        report = evaluate_pools(pools, lambda q, c: {"a": 1.0, "b": 0.0}[c], ks=(1, 2))
        assert report.render() == "1\t1.000000\n2\t1.000000\nN\t1\n"


def ten_answer_dataset():
    questions = {f"q{i}": f"question {i}" for i in range(5)}
    answers = {}
    for i in range(5):
        for j in range(2):
            answers[f"a{i}{j}"] = Answer(f"answer {i}{j}", f"q{i}")
    return Dataset(
        questions=questions,
        answers=answers,
        splits={"train": ["q0", "q1", "q2"], "dev": ["q3", "q4"], "test": []},
    )


class TestBuildPools:
    def test_zero_distractors_when_pool_equals_linked(self):
        ds = ten_answer_dataset()
        pools = build_pools(ds, 2, seed=0, split="dev")
        for pool in pools:
            assert set(pool.candidate_ids) == set(ds.answers_of(pool.question_id))

    def test_deterministic_under_seed(self):
        ds = ten_answer_dataset()
        assert build_pools(ds, 6, seed=4, split="dev") == build_pools(ds, 6, seed=4, split="dev")
        assert build_pools(ds, 6, seed=4, split="dev") != build_pools(ds, 6, seed=5, split="dev")

    def test_distractors_exclude_own_answers(self):
        ds = ten_answer_dataset()
        for seed in range(10):
            for pool in build_pools(ds, 8, seed=seed, split="dev"):
                own = set(ds.answers_of(pool.question_id))
                distractors = set(pool.candidate_ids) - own
                # exhaustive set-difference check against the dataset link structure
                for cid in distractors:
                    assert ds.answers[cid].question_id != pool.question_id
                assert own <= set(pool.candidate_ids)

    def test_pool_size_exceeding_answers_rejected(self):
        with pytest.raises(InputError):
            build_pools(ten_answer_dataset(), 11, seed=0)

    def test_relevant_ids_are_linked_answers(self):
        ds = ten_answer_dataset()
        for pool in build_pools(ds, 5, seed=1, split="train"):
            assert pool.relevant_ids == frozenset(ds.answers_of(pool.question_id))


class TestPoolFile:
    def test_round_trip(self, tmp_path):
        path = tmp_path / "pools.csv"
        path.write_text(
            "question_id,candidate_id,label\n"
            "q1,a1,1\nq1,a2,0\nq1,a3,0\n"
            "q2,a2,0\nq2,a4,1\n",
            encoding="utf-8",
        )
        pools = load_pools(path)
        assert len(pools) == 2
        assert pools[0].candidate_ids == ("a1", "a2", "a3")
        assert pools[0].relevant_ids == {"a1"}
        assert pools[1].relevant_ids == {"a4"}

    def test_bad_label_rejected(self, tmp_path):
        path = tmp_path / "pools.csv"
        path.write_text("question_id,candidate_id,label\nq1,a1,2\n", encoding="utf-8")
        with pytest.raises(InputError):
            load_pools(path)

    def test_bad_header_rejected(self, tmp_path):
        path = tmp_path / "pools.csv"
        path.write_text("qid,cid,rel\nq1,a1,1\n", encoding="utf-8")
        with pytest.raises(InputError):
            load_pools(path)


class TestDatasetScorer:
    def test_scores_use_texts(self):
        ds = ten_answer_dataset()
        score = dataset_scorer(ds, lambda q, a: float(len(q) + len(a)))
        assert score("q0", "a00") == len("question 0") + len("answer 00")
