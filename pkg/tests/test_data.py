"""Dataset ingestion, synthetic corpus, and summary statistics."""

import math
from collections import Counter

import pytest

from qamatch.data import (
    Answer,
    DanglingReference,
    Dataset,
    DuplicateId,
    MalformedRow,
    MissingDataFile,
    SyntheticSpec,
    generate_synthetic,
    load_dataset,
    save_dataset,
    summarize,
)
from qamatch.errors import DatasetError, InputError
from qamatch.evaluation import build_pools, dataset_scorer, evaluate_pools


def fixture_dataset():
    return Dataset(
        questions={"q1": "肚子疼怎么办", "q2": "头晕吃什么药"},
        answers={
            "a1": Answer("多喝热水", "q1"),
            "a2": Answer("去医院检查", "q1"),
            "a3": Answer("按时吃药", "q2"),
        },
        splits={"train": ["q1", "q2"], "dev": [], "test": []},
    )


def write_fixture(tmp_path, questions=None, answers=None, splits=None):
    (tmp_path / "questions.csv").write_text(
        questions if questions is not None else "question_id,content\nq1,肚子疼\nq2,头晕\n",
        encoding="utf-8",
    )
    (tmp_path / "answers.csv").write_text(
        answers
        if answers is not None
        else "ans_id,question_id,content\na1,q1,多喝热水\na2,q2,按时吃药\n",
        encoding="utf-8",
    )
    defaults = {"train": "q1\nq2\n", "dev": "", "test": ""}
    for name, content in (splits or defaults).items():
        (tmp_path / f"{name}.txt").write_text(content, encoding="utf-8")


class TestLoadDataset:
    def test_two_question_fixture_links(self, tmp_path):
        write_fixture(tmp_path)
        ds = load_dataset(tmp_path)
        assert ds.questions == {"q1": "肚子疼", "q2": "头晕"}
        assert ds.answers_of("q1") == ["a1"]
        assert ds.answers_of("q2") == ["a2"]
        assert ds.splits["train"] == ["q1", "q2"]

    def test_dangling_reference_names_row(self, tmp_path):
        write_fixture(
            tmp_path,
            answers="ans_id,question_id,content\na1,q1,好\na2,q9,坏\n",
            splits={"train": "q1\n", "dev": "", "test": ""},
        )
        with pytest.raises(DanglingReference) as exc:
            load_dataset(tmp_path)
        assert "row 3" in str(exc.value) and "q9" in str(exc.value)

    def test_duplicate_question_id(self, tmp_path):
        write_fixture(tmp_path, questions="question_id,content\nq1,一\nq1,二\n")
        with pytest.raises(DuplicateId) as exc:
            load_dataset(tmp_path)
        assert "row 3" in str(exc.value)

    def test_duplicate_answer_id(self, tmp_path):
        write_fixture(
            tmp_path,
            answers="ans_id,question_id,content\na1,q1,好\na1,q2,坏\n",
        )
        with pytest.raises(DuplicateId):
            load_dataset(tmp_path)

    def test_missing_file(self, tmp_path):
        write_fixture(tmp_path)
        (tmp_path / "answers.csv").unlink()
        with pytest.raises(MissingDataFile):
            load_dataset(tmp_path)

    def test_malformed_row(self, tmp_path):
        write_fixture(tmp_path, questions="question_id,content\nq1\n")
        with pytest.raises(MalformedRow) as exc:
            load_dataset(tmp_path)
        assert "row 2" in str(exc.value)

    def test_wrong_header(self, tmp_path):
        write_fixture(tmp_path, questions="id,text\nq1,x\n")
        with pytest.raises(MalformedRow):
            load_dataset(tmp_path)

    def test_split_with_unlinked_question(self, tmp_path):
        write_fixture(
            tmp_path,
            answers="ans_id,question_id,content\na1,q1,好\n",
            splits={"train": "q1\nq2\n", "dev": "", "test": ""},
        )
        with pytest.raises(DatasetError):
            load_dataset(tmp_path)

    def test_overlapping_splits_rejected(self, tmp_path):
        write_fixture(tmp_path, splits={"train": "q1\nq2\n", "dev": "q1\n", "test": ""})
        with pytest.raises(DatasetError):
            load_dataset(tmp_path)

    def test_quoted_fields_round_trip(self, tmp_path):
        ds = Dataset(
            questions={"q1": 'text with, comma and "quotes"', "q2": "line\nbreak"},
            answers={"a1": Answer("plain", "q1"), "a2": Answer("x,y", "q2")},
            splits={"train": ["q1", "q2"], "dev": [], "test": []},
        )
        save_dataset(ds, tmp_path)
        assert load_dataset(tmp_path) == ds

    def test_save_load_identity_on_fixture(self, tmp_path):
        ds = fixture_dataset()
        save_dataset(ds, tmp_path)
        assert load_dataset(tmp_path) == ds


class TestSyntheticCorpus:
    def test_counts_and_invariants(self):
        ds = generate_synthetic(SyntheticSpec(30, 2, 40, seed=7))
        assert len(ds.questions) == 30
        assert len(ds.answers) == 60
        ds.validate()
        for qid in ds.questions:
            assert len(ds.answers_of(qid)) == 2
        all_split = set(ds.splits["train"]) | set(ds.splits["dev"]) | set(ds.splits["test"])
        assert all_split == set(ds.questions)

    def test_deterministic_under_seed(self):
        spec = SyntheticSpec(12, 2, 30, seed=5)
        assert generate_synthetic(spec) == generate_synthetic(spec)
        other = generate_synthetic(SyntheticSpec(12, 2, 30, seed=6))
        assert other != generate_synthetic(spec)

    def test_overlap_scorer_recovers_planted_signal(self):
        # no learning at all: bag-of-characters cosine must already beat 0.5
        ds = generate_synthetic(SyntheticSpec(30, 2, 40, seed=7))

        def overlap(q_text, a_text):
            cq, ca = Counter(q_text), Counter(a_text)
            num = sum(cq[c] * ca[c] for c in set(cq) & set(ca))
            den = math.sqrt(sum(v * v for v in cq.values())) * math.sqrt(
                sum(v * v for v in ca.values())
            )
            return num / den if den else 0.0

        pools = build_pools(ds, 10, seed=0, split="train")
        report = evaluate_pools(pools, dataset_scorer(ds, overlap), ks=(1,))
        assert report.accuracy(1) > 0.5

    def test_infeasible_cluster_count_rejected(self):
        # 10 chars -> 4 topic chars -> 6 distinct pairs < 30 questions
        with pytest.raises(InputError):
            generate_synthetic(SyntheticSpec(30, 2, 10, seed=0))

    def test_small_vocab_rejected(self):
        with pytest.raises(InputError):
            SyntheticSpec(5, 1, 9, seed=0)

    def test_dev_split_present_for_larger_corpora(self):
        ds = generate_synthetic(SyntheticSpec(30, 2, 40, seed=7))
        assert len(ds.splits["dev"]) == 6
        assert len(ds.splits["train"]) == 24


class TestSummarize:
    def test_fixture_statistics_match_hand_computation(self):
        ds = fixture_dataset()
        report = summarize(ds)
        assert report["train"]["questions"] == 2
        assert report["train"]["answers"] == 3
        # question lengths 6 and 6; answer lengths 4, 5, 4
        assert report["train"]["avg_question_chars"] == pytest.approx(6.0)
        assert report["train"]["avg_answer_chars"] == pytest.approx((4 + 5 + 4) / 3)
        assert report["total"]["questions"] == 2
        assert report["dev"]["questions"] == 0
