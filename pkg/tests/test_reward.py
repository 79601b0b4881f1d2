import json
import math
import random

import pytest
from hypothesis import given, strategies as st

import reviewrec.reward as reward_module
from conftest import make_interaction, summaries_for
from reviewrec.backend import MockBackend, MockRule
from reviewrec.corpus import HistoryPair, build_history, sample_training_pairs
from reviewrec.errors import ExportError, PromptError
from reviewrec.predictor import compute_average_ratings
from reviewrec.reward import RewardJudge, evaluation_score, export_reward_sft


def history_pair(user="U", item="TGT"):
    hist = [make_interaction(user, f"h{n}", ts=10 + n) for n in range(2)]
    return HistoryPair(hist, [], user, item), summaries_for(*hist)


def one_hot(rating):
    """Logprob map whose weighted decode is the given integer (to ~1e-3)."""
    return {
        "text": str(rating),
        "logprobs": {str(k): (0.0 if k == rating else -40.0) for k in range(1, 6)},
    }


class TestEvaluationScore:
    def test_formula(self):
        assert evaluation_score(5, 4.6, 4.0) == pytest.approx(-0.6)
        assert evaluation_score(3, 3.0, 3.0) == 0.0
        assert evaluation_score(1, 4.0, 1.5) == pytest.approx(2.5)

    def test_reason_better_than_review_is_negative(self):
        assert evaluation_score(5, 4.9, 4.0) < 0

    @given(
        st.integers(1, 5),
        st.floats(1.0, 5.0),
        st.floats(1.0, 5.0),
    )
    def test_bounded(self, r_true, r_reason, r_review):
        assert abs(evaluation_score(r_true, r_reason, r_review)) <= 4.0

    @given(st.integers(1, 5), st.floats(1.0, 5.0), st.floats(1.0, 5.0))
    def test_swap_negates(self, r_true, a, b):
        assert evaluation_score(r_true, a, b) == pytest.approx(
            -evaluation_score(r_true, b, a)
        )


@pytest.fixture
def queue_judge(monkeypatch):
    def build(values, tau=0.1):
        feed = list(values)
        calls = []

        def fake_predict(backend, pair, summaries, averages, filler, title, temp=0.0):
            calls.append(filler)
            return feed.pop(0)

        monkeypatch.setattr(reward_module, "reward_predict", fake_predict)
        judge = RewardJudge(backend=None, tau=tau)
        judge.predict_calls = calls
        return judge

    return build


class TestRewardJudge:
    def test_accept_below_tau(self, queue_judge):
        judge = queue_judge([4.0, 4.05], tau=0.1)  # review first, then reason
        pair, summaries = history_pair()
        averages = compute_average_ratings(pair)
        j = judge.judge_reason(pair, summaries, averages, "reason", "review", 4, "T")
        assert j.r_review == 4.0
        assert j.r_reason == 4.05
        assert j.s_eval == pytest.approx(0.05)
        assert j.score == 1

    def test_reject_at_or_above_tau(self, queue_judge):
        judge = queue_judge([4.0, 3.9, 4.0], tau=0.1)
        pair, summaries = history_pair()
        averages = compute_average_ratings(pair)
        exactly_tau = judge.judge_reason(
            pair, summaries, averages, "r1", "review", 4, "T"
        )
        assert exactly_tau.s_eval == pytest.approx(0.1)
        assert exactly_tau.score == 0  # strict inequality
        worse = judge.judge_reason(pair, summaries, averages, "r2", "review", 4, "T")
        assert worse.s_eval == pytest.approx(0.0)
        assert worse.score == 1

    def test_review_prediction_cached_per_pair(self, queue_judge):
        judge = queue_judge([4.0, 3.0, 3.5], tau=0.5)
        pair, summaries = history_pair()
        averages = compute_average_ratings(pair)
        judge.judge_reason(pair, summaries, averages, "c1", "review", 4, "T")
        second = judge.judge_reason(pair, summaries, averages, "c2", "review", 4, "T")
        assert second.r_review == 4.0  # cached, not re-queued
        # calls: review once + one per candidate
        assert judge.predict_calls == ["review", "c1", "c2"]

    def test_distinct_pairs_not_shared(self, queue_judge):
        judge = queue_judge([4.0, 4.0, 2.0, 2.0], tau=0.5)
        pair_a, summaries_a = history_pair("U", "A")
        pair_b, summaries_b = history_pair("U", "B")
        a = judge.judge_reason(
            pair_a, summaries_a, compute_average_ratings(pair_a), "c", "rev", 4, "T"
        )
        b = judge.judge_reason(
            pair_b, summaries_b, compute_average_ratings(pair_b), "c", "rev", 4, "T"
        )
        assert a.r_review == 4.0
        assert b.r_review == 2.0

    def test_tau_monotonicity(self, queue_judge):
        pair, summaries = history_pair()
        averages = compute_average_ratings(pair)
        rng = random.Random(11)
        for _ in range(50):
            r_review = rng.uniform(1, 5)
            r_reason = rng.uniform(1, 5)
            taus = sorted(rng.uniform(-1, 1) for _ in range(3))
            scores = []
            for tau in taus:
                judge = queue_judge([r_review, r_reason], tau=tau)
                j = judge.judge_reason(
                    pair, summaries, averages, "c", "rev", 3, "T"
                )
                scores.append(j.score)
            assert scores == sorted(scores)  # larger tau never flips 1 -> 0

    def test_empty_review_rejected(self, queue_judge):
        judge = queue_judge([4.0])
        pair, summaries = history_pair()
        with pytest.raises(PromptError):
            judge.judge_reason(
                pair, summaries, compute_average_ratings(pair), "c", "  ", 4, "T"
            )

    def test_nonfinite_tau_rejected(self):
        with pytest.raises(ValueError):
            RewardJudge(backend=None, tau=math.inf)

    def test_end_to_end_with_mock_backend(self):
        backend = MockBackend(
            [MockRule(responses=[one_hot(4), one_hot(4)])]
        )
        judge = RewardJudge(backend, tau=0.1)
        pair, summaries = history_pair()
        averages = compute_average_ratings(pair)
        j = judge.judge_reason(pair, summaries, averages, "reason", "review", 4, "T")
        assert j.r_review == pytest.approx(4.0, abs=1e-3)
        assert abs(j.s_eval) < 1e-6  # identical decodes cancel exactly
        assert j.score == 1


class TestExportRewardSft:
    def test_overlap_is_fatal(self, fixture_split, tmp_path):
        instruct, reward = sample_training_pairs(fixture_split, 6, 4, seed=13)
        with pytest.raises(ExportError, match="overlap"):
            export_reward_sft(
                reward, fixture_split, {}, list(instruct) + [reward[0]],
                tmp_path / "r.jsonl",
            )

    def summaries_covering(self, split, pairs):
        summaries = {}
        for user, item in pairs:
            hist = build_history(split, user, item, 10)
            summaries.update(summaries_for(*hist.user_history, *hist.item_history))
        return summaries

    def test_records_and_labels(self, fixture_split, tmp_path):
        instruct, reward = sample_training_pairs(fixture_split, 6, 4, seed=13)
        summaries = self.summaries_covering(fixture_split, reward)
        out = tmp_path / "r.jsonl"
        count = export_reward_sft(reward, fixture_split, summaries, instruct, out)
        assert count == 4
        records = [json.loads(line) for line in out.read_text().splitlines()]
        for rec in records:
            user_msg, assistant_msg = rec["messages"]
            assert user_msg["role"] == "user"
            assert "SENTINEL_" in user_msg["content"]  # review fills the slot
            assert assistant_msg["content"].startswith("Predicted Rating: ")
            assert assistant_msg["content"][-1] in "12345"

    def test_empty_reviews_skipped(self, tmp_path):
        from conftest import make_corpus
        from reviewrec.corpus import temporal_split

        specs = [
            make_interaction("A", f"i{n}", review="words", ts=n) for n in range(6)
        ]
        specs += [make_interaction("B", "i0", review="", ts=10)]
        specs += [make_interaction(f"p{n}", "i1", review="x", ts=20 + n) for n in range(4)]
        split = temporal_split(make_corpus(specs), 0.1, 0.1)
        summaries = self.summaries_covering(split, [("A", "i2"), ("B", "i0")])
        out = tmp_path / "r.jsonl"
        count = export_reward_sft(
            [("A", "i2"), ("B", "i0")], split, summaries, [], out
        )
        assert count == 1  # B's empty-review pair skipped
