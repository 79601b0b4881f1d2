"""Review corpus ingestion, k-core filtering, temporal splitting and histories."""

from __future__ import annotations

import json
import logging
import random
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ColdStartError, CorpusError

logger = logging.getLogger(__name__)

DEFAULT_FIELD_MAP = {
    "user_id": "user_id",
    "item_id": "item_id",
    "item_title": "item_title",
    "rating": "rating",
    "review_text": "review_text",
    "timestamp": "timestamp",
}


@dataclass(frozen=True)
class Interaction:
    """One (user, item, rating, review, timestamp) record."""

    user_id: str
    item_id: str
    item_title: str
    rating: int
    review_text: str
    timestamp: int

    def __post_init__(self):
        if not self.user_id or not self.item_id:
            raise CorpusError("user_id and item_id must be non-empty")
        if self.rating not in (1, 2, 3, 4, 5):
            raise CorpusError(f"rating {self.rating!r} outside [1,5]")
        if self.timestamp < 0:
            raise CorpusError("timestamp must be >= 0")

    def to_record(self) -> dict:
        return {
            "user_id": self.user_id,
            "item_id": self.item_id,
            "item_title": self.item_title,
            "rating": self.rating,
            "review_text": self.review_text,
            "timestamp": self.timestamp,
        }


class Corpus:
    """Immutable interaction list with user/item position indices."""

    def __init__(self, interactions):
        self.interactions: list[Interaction] = list(interactions)
        seen = set()
        for it in self.interactions:
            key = (it.user_id, it.item_id, it.timestamp)
            if key in seen:
                raise CorpusError(f"duplicate interaction {key}")
            seen.add(key)
        self.user_index: dict[str, list[int]] = {}
        self.item_index: dict[str, list[int]] = {}
        for pos, it in enumerate(self.interactions):
            self.user_index.setdefault(it.user_id, []).append(pos)
            self.item_index.setdefault(it.item_id, []).append(pos)

    def __len__(self):
        return len(self.interactions)

    def __iter__(self):
        return iter(self.interactions)

    def users(self):
        return self.user_index.keys()

    def items(self):
        return self.item_index.keys()

    def by_user(self, user_id: str) -> list[Interaction]:
        return [self.interactions[i] for i in self.user_index.get(user_id, [])]

    def by_item(self, item_id: str) -> list[Interaction]:
        return [self.interactions[i] for i in self.item_index.get(item_id, [])]

    def global_mean_rating(self) -> float:
        if not self.interactions:
            return 3.0
        return sum(it.rating for it in self.interactions) / len(self.interactions)

    def save_jsonl(self, path):
        path = Path(path)
        tmp = path.with_suffix(path.suffix + ".tmp")
        with tmp.open("w", encoding="utf-8") as fh:
            for it in self.interactions:
                fh.write(json.dumps(it.to_record(), sort_keys=True) + "\n")
        tmp.replace(path)

    @classmethod
    def load_jsonl(cls, path) -> "Corpus":
        interactions = []
        with Path(path).open(encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    rec = json.loads(line)
                    interactions.append(Interaction(**rec))
        return cls(interactions)


@dataclass
class SplitCorpus:
    train: Corpus
    valid: Corpus
    test: Corpus
    cold_start_removed: int = 0

    def counts(self) -> dict:
        return {
            "train": len(self.train),
            "valid": len(self.valid),
            "test": len(self.test),
            "cold_start_removed": self.cold_start_removed,
        }


@dataclass
class HistoryPair:
    """Chronological user/item histories for a target (user, item) pair."""

    user_history: list[Interaction]
    item_history: list[Interaction]
    target_user: str
    target_item: str


def load_reviews(path, field_map=None) -> tuple[Corpus, Counter]:
    """Read newline-delimited JSON reviews into a Corpus.

    ``field_map`` maps canonical field names to the names used in the file.
    Malformed records are skipped and tallied, never fatal; an unreadable
    file is fatal.
    """
    fmap = dict(DEFAULT_FIELD_MAP)
    fmap.update(field_map or {})
    skipped: Counter = Counter()
    interactions = []
    seen = set()
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise CorpusError(f"cannot read review file {path}: {exc}") from exc
    with fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError:
                skipped["unparseable"] += 1
                continue
            try:
                user = str(rec[fmap["user_id"]])
                item = str(rec[fmap["item_id"]])
                rating = int(rec[fmap["rating"]])
            except (KeyError, TypeError, ValueError):
                skipped["missing_field"] += 1
                continue
            if not user or not item:
                skipped["missing_field"] += 1
                continue
            if rating not in (1, 2, 3, 4, 5):
                skipped["bad_rating"] += 1
                continue
            title = str(rec.get(fmap["item_title"], "") or item)
            review = str(rec.get(fmap["review_text"], "") or "")
            try:
                ts = int(rec.get(fmap["timestamp"], 0) or 0)
            except (TypeError, ValueError):
                skipped["bad_timestamp"] += 1
                continue
            if ts < 0:
                skipped["bad_timestamp"] += 1
                continue
            key = (user, item, ts)
            if key in seen:
                skipped["duplicate"] += 1
                continue
            seen.add(key)
            interactions.append(
                Interaction(
                    user_id=user,
                    item_id=item,
                    item_title=title,
                    rating=rating,
                    review_text=review,
                    timestamp=ts,
                )
            )
    corpus = Corpus(interactions)
    if skipped:
        logger.info("load_reviews skipped records: %s", dict(skipped))
    return corpus, skipped


def kcore_filter(corpus: Corpus, k: int) -> Corpus:
    """Maximal sub-corpus where every user and item keeps >= k interactions.

    Removals cascade until a fixpoint is reached; may return an empty corpus.
    """
    if k < 1:
        raise CorpusError("k must be >= 1")
    interactions = list(corpus.interactions)
    while True:
        user_counts = Counter(it.user_id for it in interactions)
        item_counts = Counter(it.item_id for it in interactions)
        kept = [
            it
            for it in interactions
            if user_counts[it.user_id] >= k and item_counts[it.item_id] >= k
        ]
        if len(kept) == len(interactions):
            return Corpus(kept)
        interactions = kept


def _sort_key(it: Interaction):
    # Stable tie-break on ids keeps splits deterministic for equal timestamps.
    return (it.timestamp, it.user_id, it.item_id)


def temporal_split(
    corpus: Corpus, valid_fraction: float, test_fraction: float
) -> SplitCorpus:
    """Chronological train/valid/test split with cold-start exclusion.

    The latest ``test_fraction`` of interactions forms the test set, the
    preceding ``valid_fraction`` the validation set.  Valid/test interactions
    whose user or item never appears in train are then removed and tallied.
    """
    if valid_fraction <= 0 or test_fraction <= 0:
        raise CorpusError("split fractions must be positive")
    if valid_fraction + test_fraction >= 1:
        raise CorpusError("split fractions must sum to < 1")
    ordered = sorted(corpus.interactions, key=_sort_key)
    n = len(ordered)
    n_test = int(n * test_fraction)
    n_valid = int(n * valid_fraction)
    n_train = n - n_valid - n_test
    for name, count in (("train", n_train), ("valid", n_valid), ("test", n_test)):
        if count < 1:
            raise CorpusError(f"corpus too small to populate the {name} split")
    train = ordered[:n_train]
    valid = ordered[n_train : n_train + n_valid]
    test = ordered[n_train + n_valid :]
    train_users = {it.user_id for it in train}
    train_items = {it.item_id for it in train}

    def warm(entries):
        return [
            it
            for it in entries
            if it.user_id in train_users and it.item_id in train_items
        ]

    valid_warm = warm(valid)
    test_warm = warm(test)
    removed = (len(valid) - len(valid_warm)) + (len(test) - len(test_warm))
    return SplitCorpus(
        train=Corpus(train),
        valid=Corpus(valid_warm),
        test=Corpus(test_warm),
        cold_start_removed=removed,
    )


def build_history(
    split: SplitCorpus, user: str, item: str, max_len: int = 10
) -> HistoryPair:
    """Most recent ``max_len`` train interactions of the user and of the item.

    The target pair's own interaction (if present in train) is excluded from
    both sides.  Both histories come back in chronological order.
    """
    if user not in split.train.user_index:
        raise ColdStartError(f"user {user!r} not present in train")
    if item not in split.train.item_index:
        raise ColdStartError(f"item {item!r} not present in train")
    if max_len < 1:
        raise CorpusError("max_len must be >= 1")
    user_hist = sorted(
        (it for it in split.train.by_user(user) if it.item_id != item),
        key=_sort_key,
    )[-max_len:]
    item_hist = sorted(
        (it for it in split.train.by_item(item) if it.user_id != user),
        key=_sort_key,
    )[-max_len:]
    return HistoryPair(
        user_history=user_hist,
        item_history=item_hist,
        target_user=user,
        target_item=item,
    )


def sample_training_pairs(
    split: SplitCorpus, n_instruct: int, n_reward: int, seed: int
) -> tuple[list[tuple[str, str]], list[tuple[str, str]]]:
    """Draw two disjoint (user, item) pair sets from train, without replacement.

    Deterministic for a given seed.  Each (user, item) pair counts once as a
    target even when multiple train interactions exist for it.
    """
    pairs = sorted({(it.user_id, it.item_id) for it in split.train})
    needed = n_instruct + n_reward
    if len(pairs) < needed:
        raise CorpusError(
            f"need {needed} distinct train pairs, only {len(pairs)} available"
        )
    rng = random.Random(seed)
    drawn = rng.sample(pairs, needed)
    return drawn[:n_instruct], drawn[n_instruct:]


def latest_train_interaction(split: SplitCorpus, user: str, item: str) -> Interaction:
    """The most recent train interaction for a sampled (user, item) target."""
    candidates = [it for it in split.train.by_user(user) if it.item_id == item]
    if not candidates:
        raise CorpusError(f"no train interaction for pair ({user}, {item})")
    return max(candidates, key=_sort_key)
