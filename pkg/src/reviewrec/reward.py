"""Reward model interface: judge candidate reasons against target reviews."""

from __future__ import annotations

import json
import logging
import math
import threading
from dataclasses import dataclass
from pathlib import Path

from .backend import Backend
from .corpus import SplitCorpus, build_history, latest_train_interaction
from .errors import ExportError, PromptError
from .predictor import AverageRatings, compute_average_ratings, decode_prompt
from .prompts import render_reward_prompt

logger = logging.getLogger(__name__)


@dataclass
class RewardJudgment:
    r_true: int
    r_reason: float
    r_review: float
    s_eval: float
    score: int
    tau: float

    def to_dict(self) -> dict:
        return {
            "r_true": self.r_true,
            "r_reason": self.r_reason,
            "r_review": self.r_review,
            "s_eval": self.s_eval,
            "score": self.score,
            "tau": self.tau,
        }


def evaluation_score(r_true: int, r_reason: float, r_review: float) -> float:
    """|r_true - r_reason| - |r_true - r_review|; negative means the reason
    out-predicts the raw review."""
    return abs(r_true - r_reason) - abs(r_true - r_review)


def reward_predict(
    backend: Backend,
    pair,
    summaries,
    averages: AverageRatings,
    filler_text: str,
    target_title: str,
    temperature: float = 0.0,
) -> float:
    """Continuous rating from the reward prompt (predictor prompt whose
    analysis placeholder holds ``filler_text``)."""
    prompt = render_reward_prompt(
        pair, summaries, averages.as_tuple(), filler_text, target_title
    )
    return decode_prompt(backend, prompt, temperature).value


class RewardJudge:
    """Scores candidate reasons with the reward backend.

    The review-conditioned prediction is invariant across a pair's candidate
    reasons, so it is computed once per pair and cached.
    """

    def __init__(self, backend: Backend, tau: float, temperature: float = 0.0):
        if not math.isfinite(tau):
            raise ValueError("tau must be finite")
        self.backend = backend
        self.tau = tau
        self.temperature = temperature
        self._review_cache: dict[tuple[str, str], float] = {}
        self._lock = threading.Lock()

    def judge_reason(
        self,
        pair,
        summaries,
        averages: AverageRatings,
        reason_text: str,
        target_review: str,
        r_true: int,
        target_title: str,
    ) -> RewardJudgment:
        if not target_review.strip():
            raise PromptError("reward judging is undefined without a target review")
        key = (pair.target_user, pair.target_item)
        with self._lock:
            r_review = self._review_cache.get(key)
        if r_review is None:
            r_review = reward_predict(
                self.backend,
                pair,
                summaries,
                averages,
                target_review,
                target_title,
                self.temperature,
            )
            with self._lock:
                self._review_cache.setdefault(key, r_review)
                r_review = self._review_cache[key]
        r_reason = reward_predict(
            self.backend,
            pair,
            summaries,
            averages,
            reason_text,
            target_title,
            self.temperature,
        )
        s_eval = evaluation_score(r_true, r_reason, r_review)
        return RewardJudgment(
            r_true=r_true,
            r_reason=r_reason,
            r_review=r_review,
            s_eval=s_eval,
            score=1 if s_eval < self.tau else 0,
            tau=self.tau,
        )


def export_reward_sft(
    reward_pairs,
    split: SplitCorpus,
    summaries,
    instruct_pairs,
    path,
    max_history: int = 10,
) -> int:
    """Write reward-model SFT records: reward prompt (review in the
    placeholder) -> "Predicted Rating: r_true".

    Fails fast on any overlap with the instruct pair set, and skips pairs
    whose target review is empty.
    """
    reward_pairs = [tuple(p) for p in reward_pairs]
    overlap = set(reward_pairs) & {tuple(p) for p in instruct_pairs}
    if overlap:
        raise ExportError(
            f"reward pairs overlap instruct pairs: {sorted(overlap)[:5]}"
        )
    global_mean = split.train.global_mean_rating()
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    count = 0
    skipped_no_review = 0
    with tmp.open("w", encoding="utf-8") as fh:
        for user, item in reward_pairs:
            target = latest_train_interaction(split, user, item)
            if not target.review_text.strip():
                skipped_no_review += 1
                continue
            pair = build_history(split, user, item, max_history)
            averages = compute_average_ratings(pair, global_mean)
            prompt = render_reward_prompt(
                pair,
                summaries,
                averages.as_tuple(),
                target.review_text,
                target.item_title,
            )
            record = {
                "messages": [
                    {"role": "user", "content": prompt.text},
                    {
                        "role": "assistant",
                        "content": f"Predicted Rating: {target.rating}",
                    },
                ]
            }
            fh.write(json.dumps(record, sort_keys=True) + "\n")
            count += 1
    tmp.replace(path)
    if skipped_no_review:
        logger.info(
            "export_reward_sft skipped %d pairs without reviews", skipped_no_review
        )
    return count
