import math
import random

import pytest
from hypothesis import given, strategies as st

from conftest import make_interaction, summaries_for
from reviewrec.backend import MockBackend, MockRule
from reviewrec.corpus import HistoryPair
from reviewrec.errors import PredictionError
from reviewrec.predictor import (
    compute_average_ratings,
    export_predictor_sft,
    logit_weighted_decode,
    predict_rating,
)
from reviewrec.prompts import render_predictor_prompt


def history_pair(user_ratings=(5, 4, 4), item_ratings=(3,)):
    user_hist = [
        make_interaction("U", f"h{n}", rating=r, ts=10 + n)
        for n, r in enumerate(user_ratings)
    ]
    item_hist = [
        make_interaction(f"o{n}", "TGT", rating=r, ts=20 + n)
        for n, r in enumerate(item_ratings)
    ]
    return (
        HistoryPair(user_hist, item_hist, "U", "TGT"),
        summaries_for(*user_hist, *item_hist),
    )


class TestComputeAverageRatings:
    def test_arithmetic_mean(self):
        pair, _ = history_pair((5, 4, 4))
        averages = compute_average_ratings(pair)
        assert averages.user_avg == pytest.approx(13 / 3)
        assert not averages.user_history_empty

    def test_empty_item_history_falls_back(self):
        pair, _ = history_pair(item_ratings=())
        averages = compute_average_ratings(pair, global_mean=3.8)
        assert averages.item_avg == 3.8
        assert averages.item_history_empty

    def test_singleton(self):
        pair, _ = history_pair((5,))
        assert compute_average_ratings(pair).user_avg == 5.0


class TestLogitWeightedDecode:
    def test_uniform(self):
        dist = logit_weighted_decode({k: -1.3 for k in "12345"})
        for p in dist.probabilities.values():
            assert p == pytest.approx(0.2)
        assert dist.expected == pytest.approx(3.0)

    def test_one_hot_limit(self):
        logits = {"1": -80.0, "2": -80.0, "3": -80.0, "4": -80.0, "5": 0.0}
        assert logit_weighted_decode(logits).expected == pytest.approx(5.0, abs=1e-6)

    def test_hand_computed_example(self):
        logits = {"1": 0.0, "2": 0.0, "3": 0.0, "4": 0.0, "5": math.log(4)}
        dist = logit_weighted_decode(logits)
        assert dist.probabilities["5"] == pytest.approx(0.5, abs=1e-12)
        assert dist.expected == pytest.approx(3.75, abs=1e-12)

    def test_missing_key_rejected(self):
        with pytest.raises(PredictionError):
            logit_weighted_decode({"1": 0.0, "2": 0.0})

    def test_extra_key_rejected(self):
        logits = {k: 0.0 for k in "123456"}
        with pytest.raises(PredictionError):
            logit_weighted_decode(logits)

    def test_non_finite_rejected(self):
        logits = {"1": 0.0, "2": 0.0, "3": 0.0, "4": 0.0, "5": float("nan")}
        with pytest.raises(PredictionError):
            logit_weighted_decode(logits)

    @given(st.lists(st.floats(-30, 30), min_size=5, max_size=5))
    def test_shift_invariance(self, values):
        logits = dict(zip("12345", values))
        shifted = {k: v + 7.5 for k, v in logits.items()}
        a = logit_weighted_decode(logits)
        b = logit_weighted_decode(shifted)
        assert a.expected == pytest.approx(b.expected, abs=1e-9)

    @given(st.lists(st.floats(-10, 10), min_size=5, max_size=5))
    def test_probabilities_normalized_and_bounded(self, values):
        dist = logit_weighted_decode(dict(zip("12345", values)))
        assert sum(dist.probabilities.values()) == pytest.approx(1.0, abs=1e-9)
        assert 1.0 <= dist.expected <= 5.0

    def test_monotone_in_top_logit(self):
        rng = random.Random(5)
        for _ in range(50):
            values = {k: rng.uniform(-4, 4) for k in "12345"}
            base = logit_weighted_decode(values).expected
            values["5"] += 0.5
            assert logit_weighted_decode(values).expected > base


class TestPredictRating:
    def test_one_hot_logits(self):
        backend = MockBackend(
            [
                MockRule(
                    responses=[{"text": "4", "logprobs": {"4": 0.0, "5": -40.0}}],
                    repeat=True,
                )
            ]
        )
        pair, summaries = history_pair()
        averages = compute_average_ratings(pair)
        prediction = predict_rating(backend, pair, summaries, averages, None, "T")
        assert prediction.value == pytest.approx(4.0, abs=1e-4)
        assert prediction.decode_path == "logits"
        assert prediction.first_token_was_rating

    def test_text_fallback_without_logprobs(self):
        backend = MockBackend(
            [MockRule(responses=[{"text": "Predicted Rating: 3"}], repeat=True)]
        )
        pair, summaries = history_pair()
        averages = compute_average_ratings(pair)
        prediction = predict_rating(backend, pair, summaries, averages, None, "T")
        assert prediction.value == 3.0
        assert prediction.decode_path == "text"

    def test_bare_digit_fallback(self):
        backend = MockBackend([MockRule(responses=[{"text": "5"}], repeat=True)])
        pair, summaries = history_pair()
        averages = compute_average_ratings(pair)
        assert predict_rating(backend, pair, summaries, averages, None, "T").value == 5.0

    def test_unparseable_fallback_errors(self):
        backend = MockBackend(
            [MockRule(responses=[{"text": "no rating here"}], repeat=True)]
        )
        pair, summaries = history_pair()
        averages = compute_average_ratings(pair)
        with pytest.raises(PredictionError):
            predict_rating(backend, pair, summaries, averages, None, "T")

    def test_reason_included_in_prompt(self):
        backend = MockBackend(
            [MockRule(responses=[{"text": "4", "logprobs": {"4": 0.0}}], repeat=True)]
        )
        pair, summaries = history_pair()
        averages = compute_average_ratings(pair)
        predict_rating(backend, pair, summaries, averages, "great match", "T")
        assert "great match" in backend.calls[0].prompt.text

    def test_without_reason_still_predicts(self):
        backend = MockBackend(
            [MockRule(responses=[{"text": "4", "logprobs": {"4": 0.0}}], repeat=True)]
        )
        pair, summaries = history_pair()
        averages = compute_average_ratings(pair)
        prediction = predict_rating(backend, pair, summaries, averages, None, "T")
        assert prediction.value == pytest.approx(4.0, abs=1e-3)
        assert "Personalized Recommendation Analysis" not in backend.calls[0].prompt.text


class TestExportPredictorSft:
    def test_label_formatting(self, tmp_path):
        pair, summaries = history_pair()
        prompt = render_predictor_prompt(pair, summaries, (4.0, 3.0), "reason", "T")
        out = tmp_path / "sft.jsonl"
        count = export_predictor_sft([(prompt, 5)], out)
        assert count == 1
        assert '"Predicted Rating: 5"' in out.read_text()

    def test_empty_set_warns(self, tmp_path, caplog):
        import logging

        out = tmp_path / "sft.jsonl"
        with caplog.at_level(logging.WARNING):
            assert export_predictor_sft([], out) == 0
        assert out.exists()
