"""Preference distillation: summarize reviews, persist offline, export SFT data."""

from __future__ import annotations

import json
import logging
import threading
from dataclasses import dataclass
from pathlib import Path

from .backend import Backend, CompletionRequest
from .corpus import Corpus, Interaction
from .errors import ExportError, SummarizationError, SummaryParseError
from .prompts import AspectSummary, parse_aspect_summary, render_summarizer_prompt

logger = logging.getLogger(__name__)


class SummaryStore:
    """Persistent (user, item) -> summary map backed by an append-only journal.

    Each append is one JSON line; reload compacts with last-write-wins, so an
    interrupted run resumes exactly where it stopped.
    """

    def __init__(self, path):
        self.path = Path(path)
        self._entries: dict[tuple[str, str], dict] = {}
        self._lock = threading.Lock()
        if self.path.exists():
            with self.path.open(encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    rec = json.loads(line)
                    self._entries[(rec["user_id"], rec["item_id"])] = rec

    def __len__(self):
        return len(self._entries)

    def __contains__(self, pair):
        return tuple(pair) in self._entries

    def pairs(self):
        return set(self._entries)

    def put(
        self,
        user_id: str,
        item_id: str,
        summary: AspectSummary,
        raw_text: str,
        model_tag: str,
    ):
        rec = {
            "user_id": user_id,
            "item_id": item_id,
            "positive_aspects": summary.positive_aspects,
            "negative_aspects": summary.negative_aspects,
            "preference_elements": summary.preference_elements,
            "source_rating": summary.source_rating,
            "raw_text": raw_text,
            "model_tag": model_tag,
        }
        with self._lock:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
            self._entries[(user_id, item_id)] = rec

    def get(self, user_id: str, item_id: str) -> AspectSummary:
        rec = self._entries[(user_id, item_id)]
        return AspectSummary(
            positive_aspects=list(rec["positive_aspects"]),
            negative_aspects=list(rec["negative_aspects"]),
            preference_elements=list(rec["preference_elements"]),
            source_rating=rec["source_rating"],
        )

    def raw_text(self, user_id: str, item_id: str) -> str:
        return self._entries[(user_id, item_id)]["raw_text"]

    def as_summary_map(self) -> dict[tuple[str, str], AspectSummary]:
        return {pair: self.get(*pair) for pair in self._entries}


@dataclass
class SummarizeStats:
    new: int = 0
    skipped: int = 0
    failed: int = 0
    no_review: int = 0

    def to_dict(self) -> dict:
        return {
            "new": self.new,
            "skipped": self.skipped,
            "failed": self.failed,
            "no_review": self.no_review,
        }


def summarize_interaction(
    backend: Backend,
    interaction: Interaction,
    domain_noun: str,
    temperature: float = 0.0,
    max_tokens: int = 256,
) -> tuple[AspectSummary, str]:
    """One summarizer call, with a single re-ask on unparseable output."""
    prompt = render_summarizer_prompt(interaction, domain_noun)
    request = CompletionRequest(
        prompt=prompt, temperature=temperature, max_tokens=max_tokens
    )
    last_error = None
    for _ in range(2):
        response = backend.complete(request)
        try:
            summary = parse_aspect_summary(response.text, interaction.rating)
            return summary, response.text
        except SummaryParseError as exc:
            last_error = exc
    raise SummarizationError(
        f"unparseable summary for pair "
        f"({interaction.user_id}, {interaction.item_id}): {last_error}"
    )


def summarize_corpus_offline(
    backend: Backend,
    corpus: Corpus,
    store: SummaryStore,
    domain_noun: str,
    model_tag: str = "teacher",
) -> SummarizeStats:
    """Summarize every interaction missing from the store; resumable.

    Existing entries are left untouched.  Per-pair failures are tallied and
    the run continues; store write failures propagate.
    """
    stats = SummarizeStats()
    for it in corpus:
        pair = (it.user_id, it.item_id)
        if pair in store:
            stats.skipped += 1
            continue
        if not it.review_text.strip():
            stats.no_review += 1
            continue
        try:
            summary, raw = summarize_interaction(backend, it, domain_noun)
        except SummarizationError as exc:
            logger.warning("summarization failed: %s", exc)
            stats.failed += 1
            continue
        store.put(it.user_id, it.item_id, summary, raw, model_tag)
        stats.new += 1
    return stats


def export_summarizer_sft(
    store: SummaryStore,
    pairs,
    corpus: Corpus,
    domain_noun: str,
    path,
) -> int:
    """Write chat-format SFT records pairing summarizer prompts with teacher output."""
    by_pair = {}
    for it in corpus:
        by_pair[(it.user_id, it.item_id)] = it
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    count = 0
    with tmp.open("w", encoding="utf-8") as fh:
        for pair in pairs:
            pair = tuple(pair)
            if pair not in store:
                raise ExportError(f"pair {pair} missing from summary store")
            if pair not in by_pair:
                raise ExportError(f"pair {pair} missing from corpus")
            prompt = render_summarizer_prompt(by_pair[pair], domain_noun)
            record = {
                "messages": [
                    {"role": "user", "content": prompt.text},
                    {"role": "assistant", "content": store.raw_text(*pair)},
                ]
            }
            fh.write(json.dumps(record, sort_keys=True) + "\n")
            count += 1
    tmp.replace(path)
    return count
