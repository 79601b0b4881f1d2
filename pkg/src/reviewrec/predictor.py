"""Feedback prediction: average-rating features and logit-weighted decoding."""

from __future__ import annotations

import json
import logging
import math
import re
from dataclasses import dataclass
from pathlib import Path

from .backend import (
    Backend,
    CompletionRequest,
    CompletionResponse,
    RATING_TOKENS,
    rating_token_logits,
)
from .corpus import HistoryPair
from .errors import CapabilityError, ExportError, PredictionError
from .prompts import RenderedPrompt, render_predictor_prompt

logger = logging.getLogger(__name__)

_RATING_RE = re.compile(r"Predicted Rating:\s*\[?\s*([1-5])")


@dataclass
class AverageRatings:
    user_avg: float
    item_avg: float
    user_history_empty: bool = False
    item_history_empty: bool = False

    def as_tuple(self) -> tuple[float, float]:
        return self.user_avg, self.item_avg


@dataclass
class RatingDistribution:
    """Softmax probabilities over rating tokens and their expected value."""

    probabilities: dict[str, float]
    expected: float


@dataclass
class Prediction:
    value: float
    distribution: RatingDistribution | None
    decode_path: str  # "logits" or "text"
    response: CompletionResponse
    first_token_was_rating: bool = True


def compute_average_ratings(
    pair: HistoryPair, global_mean: float = 3.0
) -> AverageRatings:
    """Arithmetic mean of history ratings; empty histories fall back to the
    global train mean with a flag."""
    user = [it.rating for it in pair.user_history]
    item = [it.rating for it in pair.item_history]
    return AverageRatings(
        user_avg=sum(user) / len(user) if user else global_mean,
        item_avg=sum(item) / len(item) if item else global_mean,
        user_history_empty=not user,
        item_history_empty=not item,
    )


def logit_weighted_decode(logits: dict[str, float]) -> RatingDistribution:
    """Softmax over the five rating-token logits, then the expected rating."""
    if set(logits) != set(RATING_TOKENS):
        raise PredictionError(
            f"expected exactly rating-token keys {RATING_TOKENS}, got {sorted(logits)}"
        )
    values = [logits[tok] for tok in RATING_TOKENS]
    if not all(math.isfinite(v) for v in values):
        raise PredictionError("non-finite logit value")
    peak = max(values)
    exps = [math.exp(v - peak) for v in values]
    total = sum(exps)
    probabilities = {
        tok: e / total for tok, e in zip(RATING_TOKENS, exps)
    }
    expected = sum(int(tok) * p for tok, p in probabilities.items())
    return RatingDistribution(probabilities=probabilities, expected=expected)


def decode_prompt(
    backend: Backend,
    prompt: RenderedPrompt,
    temperature: float = 0.0,
) -> Prediction:
    """Continuous rating from a rendered rating-style prompt.

    Prefers single-token logit-weighted decoding; falls back to parsing
    "Predicted Rating: <k>" text when the backend lacks log-probabilities.
    """
    request = CompletionRequest(
        prompt=prompt, temperature=temperature, want_logprobs=True
    )
    try:
        logits, response = rating_token_logits(backend, request)
    except CapabilityError:
        return _decode_text(backend, prompt, temperature)
    distribution = logit_weighted_decode(logits)
    first_ok = _first_token_is_rating(response)
    if not first_ok:
        logger.warning(
            "first decoded token was not a rating token for pair (%s, %s)",
            prompt.metadata.get("user_id"),
            prompt.metadata.get("item_id"),
        )
    return Prediction(
        value=distribution.expected,
        distribution=distribution,
        decode_path="logits",
        response=response,
        first_token_was_rating=first_ok,
    )


def _first_token_is_rating(response: CompletionResponse) -> bool:
    alts = response.first_token_alternatives or {}
    if not alts:
        return False
    top = max(alts, key=alts.get)
    return top.strip() in RATING_TOKENS


def _decode_text(backend, prompt, temperature) -> Prediction:
    response = backend.complete(
        CompletionRequest(prompt=prompt, temperature=temperature, max_tokens=32)
    )
    match = _RATING_RE.search("Predicted Rating: " + response.text)
    if match is None:
        match = _RATING_RE.search(response.text)
    if match is None:
        raise PredictionError(
            f"no parseable rating in model reply: {response.text!r}"
        )
    return Prediction(
        value=float(match.group(1)),
        distribution=None,
        decode_path="text",
        response=response,
        first_token_was_rating=False,
    )


def predict_rating(
    backend: Backend,
    pair: HistoryPair,
    summaries,
    averages: AverageRatings,
    reason: str | None,
    target_title: str,
    temperature: float = 0.0,
) -> Prediction:
    """Render the rating-prediction prompt for a pair and decode a rating.

    ``reason=None`` runs the without-reason ablation (no analysis section).
    """
    prompt = render_predictor_prompt(
        pair, summaries, averages.as_tuple(), reason, target_title
    )
    return decode_prompt(backend, prompt, temperature)


def export_predictor_sft(records, path) -> int:
    """Write chat-format SFT records: predictor prompt -> "Predicted Rating: r".

    ``records`` is an iterable of (prompt: RenderedPrompt, true_rating: int).
    """
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    count = 0
    with tmp.open("w", encoding="utf-8") as fh:
        for prompt, true_rating in records:
            if prompt is None:
                raise ExportError("missing predictor prompt for a pair")
            record = {
                "messages": [
                    {"role": "user", "content": prompt.text},
                    {"role": "assistant", "content": f"Predicted Rating: {true_rating}"},
                ]
            }
            fh.write(json.dumps(record, sort_keys=True) + "\n")
            count += 1
    tmp.replace(path)
    if count == 0:
        logger.warning("export_predictor_sft wrote an empty dataset to %s", path)
    return count
