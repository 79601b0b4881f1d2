"""Pipeline orchestration: composable subcommands over file artifacts.

Stages form a DAG of files under the configured output directory:

    prepare      train/valid/test.jsonl + split_manifest.json
    summarize    summaries.jsonl + summarize_report.json
    gen-reasons  instruct/reward pair files, reasons.jsonl,
                 reasons_ledger.jsonl, reasoner_sft.jsonl
    export-sft   summarizer/reward/predictor SFT datasets
    predict      predictions[_<ablation>].jsonl
    baseline-mf  mf_model.json + mf_predictions.jsonl
    evaluate     eval_report.json / eval_report.txt

Exit codes: 0 success, 1 config validation, 2 stage failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import re
import sys
from pathlib import Path

from . import baseline_mf as mf
from .backend import CompletionRequest, RecordingBackend, cost_report
from .config import PipelineConfig, load_preset
from .corpus import (
    SplitCorpus,
    build_history,
    kcore_filter,
    latest_train_interaction,
    load_reviews,
    sample_training_pairs,
    temporal_split,
)
from .errors import ConfigError, ReviewRecError
from .evaluator import EvalReport, build_report, format_table, judge_alignment
from .predictor import (
    compute_average_ratings,
    export_predictor_sft,
    predict_rating,
)
from .prompts import (
    render_ablation_prompt,
    render_predictor_prompt,
    render_reasoner_prompt,
)
from .reasoner import (
    REVIEW_GUIDED,
    generate_variant_reason,
    generation_then_filter,
    export_reasoner_sft,
    infer_reason,
    write_acceptance_ledger,
)
from .reward import RewardJudge, export_reward_sft
from .summarizer import (
    SummaryStore,
    export_summarizer_sft,
    summarize_corpus_offline,
)

logger = logging.getLogger(__name__)

_RATING_RE = re.compile(r"Predicted Rating:\s*\[?\s*([1-5])")

VARIANT_FLAG_MODES = {
    "review-guided": "review_guided",
    "review-inferred": "review_inferred",
    "hint-inferred": "hint_inferred",
    "history-inferred": "history_inferred",
}


def _write_json(path: Path, obj):
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(
        json.dumps(obj, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    tmp.replace(path)


def _write_jsonl(path: Path, rows):
    tmp = path.with_suffix(path.suffix + ".tmp")
    count = 0
    with tmp.open("w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
            count += 1
    tmp.replace(path)
    return count


def _read_jsonl(path: Path):
    with path.open(encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def _write_manifest(cfg: PipelineConfig, out: Path, stage: str, counts: dict):
    _write_json(
        out / f"manifest_{stage}.json",
        {"stage": stage, "config_hash": cfg.hash(), "seed": cfg.seed, "counts": counts},
    )


def _require(path: Path, produced_by: str) -> Path:
    if not path.exists():
        raise ReviewRecError(
            f"missing artifact {path.name}; run the '{produced_by}' stage first"
        )
    return path


def _load_split(out: Path) -> SplitCorpus:
    from .corpus import Corpus

    return SplitCorpus(
        train=Corpus.load_jsonl(_require(out / "train.jsonl", "prepare")),
        valid=Corpus.load_jsonl(_require(out / "valid.jsonl", "prepare")),
        test=Corpus.load_jsonl(_require(out / "test.jsonl", "prepare")),
    )


def _load_store(out: Path) -> SummaryStore:
    return SummaryStore(_require(out / "summaries.jsonl", "summarize"))


def _pair_key(user: str, item: str) -> tuple[str, str]:
    return (user, item)


def stage_prepare(cfg: PipelineConfig, args) -> dict:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    corpus, skipped = load_reviews(cfg.data_path, cfg.field_map)
    filtered = kcore_filter(corpus, cfg.kcore_k)
    split = temporal_split(filtered, cfg.valid_fraction, cfg.test_fraction)
    split.train.save_jsonl(out / "train.jsonl")
    split.valid.save_jsonl(out / "valid.jsonl")
    split.test.save_jsonl(out / "test.jsonl")
    counts = {
        "loaded": len(corpus),
        "skipped": dict(skipped),
        "after_kcore": len(filtered),
        **split.counts(),
    }
    _write_json(out / "split_manifest.json", counts)
    _write_manifest(cfg, out, "prepare", counts)
    return counts


def stage_summarize(cfg: PipelineConfig, args) -> dict:
    out = Path(cfg.output_dir)
    split = _load_split(out)
    store = SummaryStore(out / "summaries.jsonl")
    backend = cfg.backend("teacher")
    stats = summarize_corpus_offline(
        backend, split.train, store, cfg.domain_noun
    )
    counts = stats.to_dict()
    _write_json(out / "summarize_report.json", counts)
    _write_manifest(cfg, out, "summarize", counts)
    return counts


def stage_gen_reasons(cfg: PipelineConfig, args) -> dict:
    out = Path(cfg.output_dir)
    split = _load_split(out)
    store = _load_store(out)
    summaries = store.as_summary_map()
    global_mean = split.train.global_mean_rating()
    instruct, reward_pairs = sample_training_pairs(
        split, cfg.n_instruct, cfg.n_reward, cfg.seed
    )
    _write_json(out / "instruct_pairs.json", [list(p) for p in instruct])
    _write_json(out / "reward_pairs.json", [list(p) for p in reward_pairs])

    mode = args.mode
    teacher = RecordingBackend(cfg.backend("teacher"))
    judge = RewardJudge(cfg.backend("reward"), cfg.tau) if mode == "filtered" else None

    ledger_rows = []
    accepted = {}
    prompts = {}
    skipped_no_review = 0
    skipped_no_summary = 0
    rejected = 0
    for user, item in instruct:
        target = latest_train_interaction(split, user, item)
        pair = build_history(split, user, item, cfg.max_history)
        try:
            prompt = render_reasoner_prompt(
                pair, summaries, target.item_title, cfg.domain_noun
            )
        except ReviewRecError:
            skipped_no_summary += 1
            continue
        averages = compute_average_ratings(pair, global_mean)
        calls_before = teacher.call_count
        if mode == "filtered":
            if not target.review_text.strip():
                skipped_no_review += 1
                continue
            reason = generation_then_filter(
                teacher,
                lambda text: judge.judge_reason(
                    pair,
                    summaries,
                    averages,
                    text,
                    target.review_text,
                    target.rating,
                    target.item_title,
                ),
                prompt,
                target.rating,
                max_iters=cfg.max_filter_iters,
                unhinted_iters=cfg.unhinted_iters,
            )
        else:
            variant = VARIANT_FLAG_MODES[mode]
            reason = generate_variant_reason(
                teacher,
                variant,
                prompt=prompt,
                target_review=target.review_text or None,
                true_rating=target.rating,
                target_title=target.item_title,
                domain_noun=cfg.domain_noun,
            )
            reason.accepted = True
        generation_calls = teacher.call_count - calls_before
        row = {
            "user_id": user,
            "item_id": item,
            "mode": mode if mode != "filtered" else "filtered",
            "generation_calls": generation_calls,
            "accepted": bool(reason is not None and reason.accepted),
            "iteration": reason.iteration if reason else None,
            "s_eval": reason.s_eval if reason else None,
        }
        ledger_rows.append(row)
        if reason is not None and reason.accepted:
            accepted[_pair_key(user, item)] = reason
            prompts[_pair_key(user, item)] = prompt
        else:
            rejected += 1
    write_acceptance_ledger(ledger_rows, out / "reasons_ledger.jsonl")
    _write_jsonl(
        out / "reasons.jsonl",
        (
            {
                "user_id": u,
                "item_id": i,
                "text": r.text,
                "mode": r.mode,
                "iteration": r.iteration,
                "s_eval": r.s_eval,
            }
            for (u, i), r in sorted(accepted.items())
        ),
    )
    exported = export_reasoner_sft(accepted, prompts, out / "reasoner_sft.jsonl")
    counts = {
        "instruct_pairs": len(instruct),
        "reward_pairs": len(reward_pairs),
        "accepted": len(accepted),
        "rejected": rejected,
        "skipped_no_review": skipped_no_review,
        "skipped_no_summary": skipped_no_summary,
        "reasoner_sft_records": exported,
    }
    _write_manifest(cfg, out, "gen_reasons", counts)
    return counts


def _load_reason_map(out: Path) -> dict:
    rows = _read_jsonl(_require(out / "reasons.jsonl", "gen-reasons"))
    return {(r["user_id"], r["item_id"]): r["text"] for r in rows}


def stage_export_sft(cfg: PipelineConfig, args) -> dict:
    out = Path(cfg.output_dir)
    split = _load_split(out)
    store = _load_store(out)
    summaries = store.as_summary_map()
    global_mean = split.train.global_mean_rating()
    which = args.which
    counts = {}
    if which in ("all", "summarizer"):
        pairs = sorted(store.pairs())
        counts["summarizer"] = export_summarizer_sft(
            store, pairs, split.train, cfg.domain_noun, out / "summarizer_sft.jsonl"
        )
    if which in ("all", "reward"):
        instruct = [
            tuple(p)
            for p in json.loads(
                _require(out / "instruct_pairs.json", "gen-reasons").read_text()
            )
        ]
        reward_pairs = [
            tuple(p)
            for p in json.loads(
                _require(out / "reward_pairs.json", "gen-reasons").read_text()
            )
        ]
        counts["reward"] = export_reward_sft(
            reward_pairs,
            split,
            summaries,
            instruct,
            out / "reward_sft.jsonl",
            cfg.max_history,
        )
    if which in ("all", "predictor", "reasoner"):
        reasons = _load_reason_map(out)
        if which in ("all", "predictor"):
            records = []
            for (user, item), text in sorted(reasons.items()):
                target = latest_train_interaction(split, user, item)
                pair = build_history(split, user, item, cfg.max_history)
                averages = compute_average_ratings(pair, global_mean)
                prompt = render_predictor_prompt(
                    pair, summaries, averages.as_tuple(), text, target.item_title
                )
                records.append((prompt, target.rating))
            counts["predictor"] = export_predictor_sft(
                records, out / "predictor_sft.jsonl"
            )
        if which in ("all", "reasoner"):
            accepted = {}
            prompts = {}
            from .reasoner import Reason

            for (user, item), text in sorted(reasons.items()):
                target = latest_train_interaction(split, user, item)
                pair = build_history(split, user, item, cfg.max_history)
                accepted[(user, item)] = Reason(text=text, mode="history_inferred")
                prompts[(user, item)] = render_reasoner_prompt(
                    pair, summaries, target.item_title, cfg.domain_noun
                )
            counts["reasoner"] = export_reasoner_sft(
                accepted, prompts, out / "reasoner_sft.jsonl"
            )
    _write_manifest(cfg, out, "export_sft", counts)
    return counts


def stage_predict(cfg: PipelineConfig, args) -> dict:
    out = Path(cfg.output_dir)
    split = _load_split(out)
    store = _load_store(out)
    summaries = store.as_summary_map()
    global_mean = split.train.global_mean_rating()
    ablation = args.ablation
    predictor_backend = RecordingBackend(cfg.backend("predictor"))
    reasoner_backend = (
        RecordingBackend(cfg.backend("reasoner")) if ablation is None else None
    )
    rows = []
    targets = sorted(
        split.test, key=lambda it: (it.user_id, it.item_id, it.timestamp)
    )
    for target in targets:
        pair = build_history(split, target.user_id, target.item_id, cfg.max_history)
        averages = compute_average_ratings(pair, global_mean)
        reason_text = None
        reason_latency = 0.0
        reason_tokens = 0
        if ablation in ("one-step", "cot"):
            mode = "one_step" if ablation == "one-step" else "cot"
            prompt = render_ablation_prompt(
                mode, pair, summaries, averages.as_tuple(), target.item_title
            )
            response = predictor_backend.complete(
                CompletionRequest(prompt=prompt, temperature=0.0, max_tokens=512)
            )
            match = _RATING_RE.search(response.text)
            if match is None:
                raise ReviewRecError(
                    f"no parseable rating in {ablation} reply: {response.text!r}"
                )
            value = float(match.group(1))
            decode_path = "text"
            reason_text = response.text
            predict_response = response
        else:
            if ablation is None:
                rprompt = render_reasoner_prompt(
                    pair, summaries, target.item_title, cfg.domain_noun
                )
                reason = infer_reason(reasoner_backend, rprompt)
                reason_text = reason.text
                last = reasoner_backend.responses[-1]
                reason_latency = last.latency
                reason_tokens = last.generated_tokens
            prediction = predict_rating(
                predictor_backend,
                pair,
                summaries,
                averages,
                reason_text,
                target.item_title,
            )
            value = prediction.value
            decode_path = prediction.decode_path
            predict_response = prediction.response
        rows.append(
            {
                "user_id": target.user_id,
                "item_id": target.item_id,
                "truth": target.rating,
                "prediction": value,
                "decode_path": decode_path,
                "reason": reason_text,
                "latency_seconds": reason_latency + predict_response.latency,
                "generated_tokens": reason_tokens + predict_response.generated_tokens,
            }
        )
    suffix = f"_{ablation.replace('-', '_')}" if ablation else ""
    pred_path = out / f"predictions{suffix}.jsonl"
    _write_jsonl(pred_path, rows)
    responses = list(predictor_backend.responses)
    if reasoner_backend is not None:
        responses += reasoner_backend.responses
    cost = cost_report(responses)
    counts = {"predictions": len(rows), "cost": cost.to_dict(), "file": pred_path.name}
    _write_manifest(cfg, out, f"predict{suffix}", counts)
    return counts


def stage_baseline_mf(cfg: PipelineConfig, args) -> dict:
    out = Path(cfg.output_dir)
    split = _load_split(out)
    if args.grid:
        model, hp, valid_rmse = mf.grid_search(
            split.train, split.valid, seed=cfg.seed
        )
        logger.info("grid best %s valid rmse %.4f", vars(hp), valid_rmse)
    else:
        hp = mf.MFHyperParams(
            n_factors=args.factors,
            learning_rate=args.learning_rate,
            l2=args.l2,
            epochs=args.epochs,
            seed=cfg.seed,
        )
        model = mf.fit(split.train, hp)
    model.save(out / "mf_model.json")
    rows = [
        {
            "user_id": it.user_id,
            "item_id": it.item_id,
            "truth": it.rating,
            "prediction": model.predict(it.user_id, it.item_id),
            "decode_path": "mf",
            "reason": None,
            "latency_seconds": 0.0,
            "generated_tokens": 0,
        }
        for it in sorted(
            split.test, key=lambda it: (it.user_id, it.item_id, it.timestamp)
        )
    ]
    _write_jsonl(out / "mf_predictions.jsonl", rows)
    counts = {
        "predictions": len(rows),
        "hyperparams": vars(model.hyperparams),
        "test_rmse": mf.evaluate_rmse(model, split.test),
    }
    _write_manifest(cfg, out, "baseline_mf", counts)
    return counts


def stage_evaluate(cfg: PipelineConfig, args) -> dict:
    out = Path(cfg.output_dir)
    files = args.predictions or ["predictions.jsonl"]
    reports: dict[str, EvalReport] = {}
    costs = {}
    review_lookup = None
    judge_backend = None
    for name in files:
        path = Path(name)
        if not path.is_absolute() and not path.exists():
            path = out / name
        rows = _read_jsonl(_require(path, "predict"))
        quality = None
        if args.quality:
            if judge_backend is None:
                judge_backend = cfg.backend("judge")
                split = _load_split(out)
                review_lookup = {
                    (it.user_id, it.item_id): it.review_text for it in split.test
                }
            quality = []
            for row in rows:
                reason = row.get("reason")
                review = review_lookup.get((row["user_id"], row["item_id"]), "")
                if reason and reason.strip() and review.strip():
                    quality.append(
                        (
                            row["user_id"],
                            row["item_id"],
                            judge_alignment(judge_backend, reason, review),
                        )
                    )
        report = build_report(
            [
                (r["user_id"], r["item_id"], r["truth"], r["prediction"])
                for r in rows
            ],
            quality,
        )
        stem = path.stem
        reports[stem] = report
        costs[stem] = {
            "avg_latency_seconds": sum(r.get("latency_seconds", 0) for r in rows)
            / len(rows),
            "avg_generated_tokens": sum(r.get("generated_tokens", 0) for r in rows)
            / len(rows),
        }
    doc = {
        "reports": {name: rep.to_dict() for name, rep in reports.items()},
        "cost": costs,
    }
    _write_json(out / "eval_report.json", doc)
    table = format_table(*reports.values(), names=list(reports))
    table_path = out / "eval_report.txt"
    tmp = table_path.with_suffix(".txt.tmp")
    tmp.write_text(table, encoding="utf-8")
    tmp.replace(table_path)
    counts = {
        name: {"count": rep.count, "mae": rep.mae, "rmse": rep.rmse}
        for name, rep in reports.items()
    }
    _write_manifest(cfg, out, "evaluate", counts)
    print(table, end="")
    return counts


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="reviewrec",
        description="Review-based deliberative rating-prediction pipeline",
    )
    parser.add_argument("--config", required=True, help="path to JSON config file")
    parser.add_argument(
        "--preset",
        choices=["music", "book", "yelp"],
        help="apply shipped per-dataset defaults under the config",
    )
    parser.add_argument("--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("prepare", help="load, k-core filter, split, persist")
    sub.add_parser("summarize", help="offline aspect-preference summarization")

    gen = sub.add_parser("gen-reasons", help="build reasoner supervision data")
    gen.add_argument(
        "--mode",
        default="filtered",
        choices=["filtered", *VARIANT_FLAG_MODES],
        help="generation-then-filter (default) or an alternative reason source",
    )

    exp = sub.add_parser("export-sft", help="export SFT datasets")
    exp.add_argument(
        "--which",
        default="all",
        choices=["all", "summarizer", "reasoner", "reward", "predictor"],
    )

    pred = sub.add_parser("predict", help="test-set inference")
    pred.add_argument(
        "--ablation",
        default=None,
        choices=["one-step", "cot", "no-reason"],
        help="replace the multi-step path with an ablation strategy",
    )

    base = sub.add_parser("baseline-mf", help="matrix-factorization baseline")
    base.add_argument("--grid", action="store_true", help="grid-search on valid")
    base.add_argument("--factors", type=int, default=32)
    base.add_argument("--learning-rate", type=float, default=0.005)
    base.add_argument("--l2", type=float, default=0.02)
    base.add_argument("--epochs", type=int, default=30)

    ev = sub.add_parser("evaluate", help="accuracy + reason-quality reports")
    ev.add_argument(
        "--predictions",
        nargs="*",
        help="prediction files to report on (default: predictions.jsonl)",
    )
    ev.add_argument(
        "--quality", action="store_true", help="run LLM-judge alignment scoring"
    )
    return parser


STAGES = {
    "prepare": stage_prepare,
    "summarize": stage_summarize,
    "gen-reasons": stage_gen_reasons,
    "export-sft": stage_export_sft,
    "predict": stage_predict,
    "baseline-mf": stage_baseline_mf,
    "evaluate": stage_evaluate,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.preset:
            preset = load_preset(args.preset)
            data = json.loads(Path(args.config).read_text(encoding="utf-8"))
            merged = {**preset, **data}
            cfg = PipelineConfig.from_dict(
                merged, config_dir=str(Path(args.config).parent)
            )
        else:
            cfg = PipelineConfig.from_json(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    try:
        counts = STAGES[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except ReviewRecError as exc:
        print(f"stage failed: {exc}", file=sys.stderr)
        return 2
    logger.info("%s done: %s", args.command, counts)
    return 0


if __name__ == "__main__":
    sys.exit(main())
