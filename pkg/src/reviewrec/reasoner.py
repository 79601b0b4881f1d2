"""Preference matching: reason generation, generation-then-filter, SFT export."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

from .backend import Backend, CompletionRequest
from .errors import ExportError, PromptError, ReviewRecError
from .prompts import (
    REASONER,
    RenderedPrompt,
    append_hint,
    contains_hint,
    render_review_inferred_prompt,
)
from .reward import RewardJudgment

logger = logging.getLogger(__name__)

HISTORY_INFERRED = "history_inferred"
HINT_INFERRED = "hint_inferred"
REVIEW_INFERRED = "review_inferred"
REVIEW_GUIDED = "review_guided"
VARIANT_MODES = (HISTORY_INFERRED, HINT_INFERRED, REVIEW_INFERRED, REVIEW_GUIDED)

DEFAULT_MAX_ITERS = 5
REASON_TEMPERATURE = 0.8  # candidate sampling needs diversity


@dataclass
class Reason:
    text: str
    mode: str
    iteration: int = 1
    accepted: bool = False
    s_eval: float | None = None


def _generate(backend: Backend, prompt: RenderedPrompt, temperature: float) -> str:
    response = backend.complete(
        CompletionRequest(prompt=prompt, temperature=temperature, max_tokens=512)
    )
    text = response.text.strip()
    if not text:
        raise ReviewRecError("model returned an empty reason")
    return text


def infer_reason(
    backend: Backend, prompt: RenderedPrompt, temperature: float = 0.0
) -> Reason:
    """Inference-time reason generation: one call, no hint, no reward filter."""
    if prompt.family != REASONER:
        raise PromptError("infer_reason requires a reasoner prompt")
    if contains_hint(prompt):
        raise PromptError("hinted prompt at inference time (leakage guard)")
    return Reason(text=_generate(backend, prompt, temperature), mode=HISTORY_INFERRED)


def generation_then_filter(
    backend: Backend,
    judge: Callable[[str], RewardJudgment],
    prompt: RenderedPrompt,
    true_rating: int,
    max_iters: int = DEFAULT_MAX_ITERS,
    temperature: float = REASON_TEMPERATURE,
    unhinted_iters: int = 1,
) -> Reason | None:
    """Sample candidate reasons until the reward judge accepts one.

    The first ``unhinted_iters`` candidates come from the bare prompt; later
    candidates carry the true-rating hint.  Returns None after ``max_iters``
    rejected candidates (the pair is then excluded from SFT data).
    """
    if max_iters < 1:
        raise ReviewRecError("max_iters must be >= 1")
    if true_rating not in (1, 2, 3, 4, 5):
        raise ReviewRecError(f"true_rating {true_rating!r} outside [1,5]")
    hinted_prompt = append_hint(prompt, true_rating)
    candidate = _generate(backend, prompt, temperature)
    for iteration in range(1, max_iters + 1):
        try:
            judgment = judge(candidate)
        except ReviewRecError as exc:
            raise ReviewRecError(f"judge failed at iteration {iteration}: {exc}") from exc
        if judgment.score == 1:
            return Reason(
                text=candidate,
                mode=HISTORY_INFERRED if iteration <= unhinted_iters else HINT_INFERRED,
                iteration=iteration,
                accepted=True,
                s_eval=judgment.s_eval,
            )
        if iteration < max_iters:
            source = prompt if iteration + 1 <= unhinted_iters else hinted_prompt
            candidate = _generate(backend, source, temperature)
    return None


def generate_variant_reason(
    backend: Backend,
    mode: str,
    prompt: RenderedPrompt | None = None,
    target_review: str | None = None,
    true_rating: int | None = None,
    target_title: str = "",
    domain_noun: str = "item",
    temperature: float = 0.0,
) -> Reason:
    """Alternative reason sources used by the ablation studies.

    review_guided uses the raw review verbatim (no model call); the other
    modes each make exactly one backend call.  None are reward-filtered.
    """
    if mode not in VARIANT_MODES:
        raise ReviewRecError(f"unknown reason mode {mode!r}")
    if mode == REVIEW_GUIDED:
        if not target_review or not target_review.strip():
            raise ReviewRecError("review_guided requires a target review")
        return Reason(text=target_review, mode=mode)
    if mode == REVIEW_INFERRED:
        if not target_review or not target_review.strip():
            raise ReviewRecError("review_inferred requires a target review")
        variant_prompt = render_review_inferred_prompt(
            target_title, target_review, domain_noun
        )
        return Reason(text=_generate(backend, variant_prompt, temperature), mode=mode)
    if prompt is None:
        raise ReviewRecError(f"{mode} requires a reasoner prompt")
    if mode == HINT_INFERRED:
        if true_rating is None:
            raise ReviewRecError("hint_inferred requires the true rating")
        hinted = append_hint(prompt, true_rating)
        return Reason(text=_generate(backend, hinted, temperature), mode=mode)
    return Reason(text=_generate(backend, prompt, temperature), mode=HISTORY_INFERRED)


def export_reasoner_sft(accepted: dict, prompts: dict, path) -> int:
    """Write reasoner SFT records: hint-free prompt -> accepted reason.

    Hints never appear in exported prompts, even for reasons accepted on a
    hinted iteration; a hinted prompt in the map is an export error.
    """
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    count = 0
    with tmp.open("w", encoding="utf-8") as fh:
        for pair, reason in sorted(accepted.items()):
            if pair not in prompts:
                raise ExportError(f"no prompt recorded for pair {pair}")
            prompt = prompts[pair]
            if contains_hint(prompt):
                raise ExportError(f"hinted prompt for pair {pair} (leakage guard)")
            record = {
                "messages": [
                    {"role": "user", "content": prompt.text},
                    {"role": "assistant", "content": reason.text},
                ]
            }
            fh.write(json.dumps(record, sort_keys=True) + "\n")
            count += 1
    tmp.replace(path)
    if count == 0:
        logger.warning("export_reasoner_sft wrote an empty dataset to %s", path)
    return count


def write_acceptance_ledger(rows, path) -> int:
    """Audit trail: one JSON line per judged pair."""
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    count = 0
    with tmp.open("w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
            count += 1
    tmp.replace(path)
    return count
