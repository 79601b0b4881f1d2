"""Prompt rendering for every prompt family, plus aspect-summary parsing.

Template text lives in ``templates/`` as plain-text resources with named
placeholders:

    summarizer       domain, title, rating, review
    reasoner         user_history, item_history, domain, title
    hint             rating
    predictor        user_history, item_history, user_avg, item_avg,
                     analysis_section, title
    one_step / cot   user_history, item_history, user_avg, item_avg, title
    review_inferred  domain, title, review
    judge            reason, review
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from functools import lru_cache
from importlib import resources

from .corpus import HistoryPair, Interaction
from .errors import PromptError, SummaryParseError

logger = logging.getLogger(__name__)

SUMMARIZER = "summarizer"
REASONER = "reasoner"
PREDICTOR = "predictor"
REWARD = "reward"
ONE_STEP = "one_step"
COT = "cot"
JUDGE = "judge"

ABLATION_MODES = (ONE_STEP, COT)

_LABELS = {
    "positive_aspects": "Positive Aspects:",
    "negative_aspects": "Negative Aspects:",
    "preference_elements": "User Preference Elements:",
}


@dataclass(frozen=True)
class RenderedPrompt:
    messages: tuple[tuple[str, str], ...]
    family: str
    metadata: dict = field(default_factory=dict)

    @property
    def text(self) -> str:
        """Concatenated user-message content."""
        return "\n".join(c for role, c in self.messages if role == "user")


@dataclass
class AspectSummary:
    """Keyword-level distillation of one review."""

    positive_aspects: list[str]
    negative_aspects: list[str]
    preference_elements: list[str]
    source_rating: int


@lru_cache(maxsize=None)
def _template(name: str) -> str:
    return (
        resources.files("reviewrec.templates").joinpath(f"{name}.txt").read_text(
            encoding="utf-8"
        )
    )


def format_average(value: float) -> str:
    """One decimal, round half away from zero (4.25 -> '4.3')."""
    return str(Decimal(repr(value)).quantize(Decimal("0.1"), rounding=ROUND_HALF_UP))


def _aspect_lines(summary: AspectSummary) -> str:
    return (
        f"Positive Aspects: {', '.join(summary.positive_aspects)}\n"
        f"Negative Aspects: {', '.join(summary.negative_aspects)}\n"
        f"User Preference Elements: {', '.join(summary.preference_elements)}\n"
    )


def _history_blocks(entries, summaries, include_ratings: bool) -> str:
    lines = []
    for idx, it in enumerate(entries, 1):
        key = (it.user_id, it.item_id)
        if key not in summaries:
            raise PromptError(f"missing aspect summary for pair {key}")
        head = f"{idx}. {it.item_title}"
        if include_ratings:
            head += f", Rating: {it.rating:.1f}"
        lines.append(head + "\n" + _aspect_lines(summaries[key]))
    return "".join(lines)


def _single_user_prompt(content: str, family: str, metadata: dict) -> RenderedPrompt:
    return RenderedPrompt(
        messages=(("user", content),), family=family, metadata=metadata
    )


def render_summarizer_prompt(
    interaction: Interaction, domain_noun: str
) -> RenderedPrompt:
    if not interaction.review_text.strip():
        raise PromptError(
            f"interaction ({interaction.user_id}, {interaction.item_id}) "
            "has no review text to summarize"
        )
    content = _template("summarizer").format(
        domain=domain_noun,
        title=interaction.item_title,
        rating=interaction.rating,
        review=interaction.review_text,
    )
    return _single_user_prompt(
        content,
        SUMMARIZER,
        {"user_id": interaction.user_id, "item_id": interaction.item_id},
    )


def parse_aspect_summary(text: str, source_rating: int) -> AspectSummary:
    """Split the three labeled lines on commas into trimmed phrase lists.

    Missing labels degrade to empty lists with a warning; text with none of
    the labels is a parse error.
    """
    found = {}
    for key, label in _LABELS.items():
        match = re.search(
            rf"^[\s*#-]*{re.escape(label)}(.*)$", text, re.MULTILINE | re.IGNORECASE
        )
        if match is None:
            continue
        phrases = [p.strip() for p in match.group(1).split(",")]
        found[key] = [p for p in phrases if p and p != "..."]
    if not found:
        raise SummaryParseError("no aspect-summary labels found in model output")
    for key, label in _LABELS.items():
        if key not in found:
            logger.warning("aspect summary missing label %r; using empty list", label)
            found[key] = []
    return AspectSummary(
        positive_aspects=found["positive_aspects"],
        negative_aspects=found["negative_aspects"],
        preference_elements=found["preference_elements"],
        source_rating=source_rating,
    )


def render_reasoner_prompt(
    pair: HistoryPair, summaries, target_title: str, domain_noun: str
) -> RenderedPrompt:
    content = _template("reasoner").format(
        user_history=_history_blocks(pair.user_history, summaries, False),
        item_history=_history_blocks(pair.item_history, summaries, False),
        domain=domain_noun,
        title=target_title,
    )
    return _single_user_prompt(
        content,
        REASONER,
        {"user_id": pair.target_user, "item_id": pair.target_item},
    )


def append_hint(prompt: RenderedPrompt, rating: int) -> RenderedPrompt:
    if prompt.family != REASONER:
        raise PromptError("hints attach to reasoner prompts only")
    if prompt.metadata.get("hinted"):
        raise PromptError("hint already present")
    if rating not in (1, 2, 3, 4, 5):
        raise PromptError(f"hint rating {rating!r} outside [1,5]")
    hint = _template("hint").format(rating=rating)
    role, content = prompt.messages[-1]
    messages = prompt.messages[:-1] + ((role, content + hint),)
    metadata = dict(prompt.metadata)
    metadata["hinted"] = True
    return RenderedPrompt(messages=messages, family=prompt.family, metadata=metadata)


def contains_hint(prompt: RenderedPrompt) -> bool:
    return prompt.metadata.get("hinted", False) or "Hint: The user actually rated" in (
        prompt.text
    )


def _analysis_section(reason_text: str | None) -> str:
    if reason_text is None:
        return ""
    return (
        "### Personalized Recommendation Analysis ###\n"
        + reason_text.strip()
        + "\n"
    )


def _rating_context_prompt(
    template: str,
    pair: HistoryPair,
    summaries,
    averages: tuple[float, float],
    target_title: str,
    family: str,
    analysis: str | None = None,
) -> RenderedPrompt:
    user_avg, item_avg = averages
    fields = {
        "user_history": _history_blocks(pair.user_history, summaries, True),
        "item_history": _history_blocks(pair.item_history, summaries, True),
        "user_avg": format_average(user_avg),
        "item_avg": format_average(item_avg),
        "title": target_title,
    }
    if template == "predictor":
        fields["analysis_section"] = _analysis_section(analysis)
    content = _template(template).format(**fields)
    return _single_user_prompt(
        content,
        family,
        {"user_id": pair.target_user, "item_id": pair.target_item},
    )


def render_predictor_prompt(
    pair: HistoryPair,
    summaries,
    averages: tuple[float, float],
    reason: str | None,
    target_title: str,
) -> RenderedPrompt:
    """Rating-prediction prompt; omit the analysis section when no reason."""
    return _rating_context_prompt(
        "predictor", pair, summaries, averages, target_title, PREDICTOR, reason
    )


def render_reward_prompt(
    pair: HistoryPair,
    summaries,
    averages: tuple[float, float],
    filler_text: str,
    target_title: str,
) -> RenderedPrompt:
    """Predictor prompt with the analysis placeholder filled by ``filler_text``."""
    if not filler_text or not filler_text.strip():
        raise PromptError("reward prompt filler text must be non-empty")
    return _rating_context_prompt(
        "predictor", pair, summaries, averages, target_title, REWARD, filler_text
    )


def render_ablation_prompt(
    mode: str,
    pair: HistoryPair,
    summaries,
    averages: tuple[float, float],
    target_title: str,
) -> RenderedPrompt:
    if mode not in ABLATION_MODES:
        raise PromptError(f"unknown ablation mode {mode!r}")
    return _rating_context_prompt(
        mode, pair, summaries, averages, target_title, mode
    )


def render_review_inferred_prompt(
    target_title: str, review_text: str, domain_noun: str
) -> RenderedPrompt:
    if not review_text.strip():
        raise PromptError("review-inferred generation requires a review")
    content = _template("review_inferred").format(
        domain=domain_noun, title=target_title, review=review_text
    )
    return _single_user_prompt(content, REASONER, {"variant": "review_inferred"})


def render_judge_prompt(reason_text: str, review_text: str) -> RenderedPrompt:
    if not reason_text.strip() or not review_text.strip():
        raise PromptError("judge prompt requires both a reason and a review")
    content = _template("judge").format(reason=reason_text, review=review_text)
    return _single_user_prompt(content, JUDGE, {})
