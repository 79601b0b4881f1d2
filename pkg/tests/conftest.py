import json
import random

import pytest

from reviewrec.corpus import Corpus, Interaction, SplitCorpus, temporal_split
from reviewrec.prompts import AspectSummary


def make_interaction(
    user="u1", item="i1", title=None, rating=4, review="solid work", ts=100
):
    return Interaction(
        user_id=user,
        item_id=item,
        item_title=title if title is not None else f"Title of {item}",
        rating=rating,
        review_text=review,
        timestamp=ts,
    )


def make_corpus(specs):
    """specs: iterable of (user, item, rating, ts) or Interaction."""
    interactions = []
    for spec in specs:
        if isinstance(spec, Interaction):
            interactions.append(spec)
        else:
            user, item, rating, ts = spec
            interactions.append(make_interaction(user, item, rating=rating, ts=ts))
    return Corpus(interactions)


def make_summary(rating=4, pos=("Catchy Melody",), neg=(), elems=("Harmony",)):
    return AspectSummary(
        positive_aspects=list(pos),
        negative_aspects=list(neg),
        preference_elements=list(elems),
        source_rating=rating,
    )


def summaries_for(*interactions, **kwargs):
    return {
        (it.user_id, it.item_id): make_summary(it.rating, **kwargs)
        for it in interactions
    }


def fixture_interactions(n_users=20, n_items=15, per_user=6, seed=7):
    """Deterministic synthetic review corpus; test-period reviews carry
    sentinel strings so leakage tests can scan prompts for them."""
    rng = random.Random(seed)
    pairs = []
    for u in range(n_users):
        user = f"u{u:02d}"
        for item_idx in rng.sample(range(n_items), per_user):
            pairs.append((user, f"i{item_idx:02d}"))
    rng.shuffle(pairs)  # interleave users across time so splits stay warm
    interactions = []
    for ts, (user, item) in enumerate(pairs, start=1000):
        interactions.append(
            Interaction(
                user_id=user,
                item_id=item,
                item_title=f"Title {item}",
                rating=rng.randint(1, 5),
                review_text=f"SENTINEL_{user}_{item} review text",
                timestamp=ts,
            )
        )
    return interactions


@pytest.fixture
def fixture_corpus():
    return Corpus(fixture_interactions())


@pytest.fixture
def fixture_split(fixture_corpus) -> SplitCorpus:
    return temporal_split(fixture_corpus, 0.15, 0.15)


MOCK_SCRIPT = {
    "seed": 0,
    "rules": [
        {
            "family": "summarizer",
            "repeat": True,
            "responses": [
                {
                    "text": (
                        "Positive Aspects: Catchy-{item_id}, Warm Tone\n"
                        "Negative Aspects: Flat-{item_id}\n"
                        "User Preference Elements: Depth-{user_id}"
                    ),
                    "generated_tokens": 20,
                    "latency": 0.002,
                }
            ],
        },
        {
            "family": "reasoner",
            "repeat": True,
            "responses": [
                {
                    "text": (
                        "The user {user_id} will likely enjoy {item_id} "
                        "given overlapping aspects."
                    ),
                    "generated_tokens": 30,
                    "latency": 0.003,
                }
            ],
        },
        {
            "family": "reward",
            "repeat": True,
            "responses": [
                {
                    "text": "4",
                    "logprobs": {"4": -0.2, "5": -1.5, "3": -2.5},
                    "generated_tokens": 1,
                    "latency": 0.001,
                }
            ],
        },
        {
            "family": "predictor",
            "repeat": True,
            "responses": [
                {
                    "text": "4",
                    "logprobs": {"4": -0.3, "5": -1.0, "3": -3.0},
                    "generated_tokens": 1,
                    "latency": 0.001,
                }
            ],
        },
        {
            "family": "judge",
            "repeat": True,
            "responses": [{"text": "85", "generated_tokens": 2, "latency": 0.001}],
        },
        {
            "family": "one_step",
            "repeat": True,
            "responses": [
                {
                    "text": "Looks like a good match.\nPredicted Rating: 4",
                    "generated_tokens": 12,
                    "latency": 0.002,
                }
            ],
        },
        {
            "family": "cot",
            "repeat": True,
            "responses": [
                {
                    "text": (
                        "Summary: warm tone\nMatch Analysis: strong overlap\n"
                        "Predicted Rating: 4"
                    ),
                    "generated_tokens": 16,
                    "latency": 0.002,
                }
            ],
        },
    ],
}


@pytest.fixture
def pipeline_workspace(tmp_path):
    """Fixture data file, mock script and a full pipeline config on disk."""
    data_path = tmp_path / "reviews.jsonl"
    with data_path.open("w") as fh:
        for it in fixture_interactions():
            fh.write(json.dumps(it.to_record()) + "\n")
    script_path = tmp_path / "script.json"
    script_path.write_text(json.dumps(MOCK_SCRIPT))
    out_dir = tmp_path / "out"
    config = {
        "data_path": str(data_path),
        "domain_noun": "Music",
        "kcore_k": 2,
        "valid_fraction": 0.15,
        "test_fraction": 0.15,
        "max_history": 10,
        "tau": 0.1,
        "max_filter_iters": 3,
        "n_instruct": 6,
        "n_reward": 4,
        "seed": 13,
        "workers": 1,
        "output_dir": str(out_dir),
        "backends": {
            role: {"type": "mock", "script_path": str(script_path)}
            for role in ("teacher", "reasoner", "predictor", "reward", "judge")
        },
    }
    config_path = tmp_path / "config.json"
    config_path.write_text(json.dumps(config))
    return {
        "tmp_path": tmp_path,
        "config_path": config_path,
        "config": config,
        "out_dir": out_dir,
        "script_path": script_path,
        "data_path": data_path,
    }
