"""Accuracy metrics (MAE/RMSE) and LLM-judge reason-quality scoring."""

from __future__ import annotations

import json
import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

from .backend import Backend, CompletionRequest
from .errors import EvaluationError
from .prompts import render_judge_prompt

logger = logging.getLogger(__name__)

_SCORE_RE = re.compile(r"-?\d+")


@dataclass
class EvalReport:
    count: int
    mae: float
    rmse: float
    per_pair: list[dict] = field(default_factory=list)
    quality_mean: float | None = None
    quality_per_pair: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        out = {
            "count": self.count,
            "mae": self.mae,
            "rmse": self.rmse,
            "per_pair": self.per_pair,
        }
        if self.quality_mean is not None:
            out["quality"] = {
                "mean": self.quality_mean,
                "per_pair": self.quality_per_pair,
            }
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "EvalReport":
        quality = data.get("quality") or {}
        return cls(
            count=data["count"],
            mae=data["mae"],
            rmse=data["rmse"],
            per_pair=list(data.get("per_pair", [])),
            quality_mean=quality.get("mean"),
            quality_per_pair=list(quality.get("per_pair", [])),
        )


def accuracy_metrics(predictions) -> tuple[float, float]:
    """MAE and RMSE over (truth, prediction) pairs."""
    predictions = list(predictions)
    if not predictions:
        raise EvaluationError("no predictions to evaluate")
    errors = [truth - pred for truth, pred in predictions]
    mae = sum(abs(e) for e in errors) / len(errors)
    rmse = math.sqrt(sum(e * e for e in errors) / len(errors))
    return mae, rmse


def judge_alignment(
    judge_backend: Backend, reason_text: str, review_text: str
) -> int:
    """Semantic-alignment score in [0,100] from the judge backend.

    Out-of-range replies are clamped with a warning; an unparseable reply
    gets one re-ask before failing.
    """
    prompt = render_judge_prompt(reason_text, review_text)
    request = CompletionRequest(prompt=prompt, temperature=0.0, max_tokens=8)
    last_reply = None
    for _ in range(2):
        response = judge_backend.complete(request)
        last_reply = response.text
        match = _SCORE_RE.search(response.text)
        if match is None:
            continue
        score = int(match.group())
        if score < 0 or score > 100:
            logger.warning("judge score %d outside [0,100]; clamping", score)
            score = min(100, max(0, score))
        return score
    raise EvaluationError(f"unparseable judge reply: {last_reply!r}")


def build_report(predictions, quality_scores=None) -> EvalReport:
    """Assemble an EvalReport from per-pair predictions.

    ``predictions``: iterable of (user, item, truth, prediction).
    ``quality_scores``: optional iterable of (user, item, score in [0,100]).
    """
    predictions = list(predictions)
    if not predictions:
        raise EvaluationError("no predictions to report")
    mae, rmse = accuracy_metrics([(t, p) for _, _, t, p in predictions])
    per_pair = [
        {
            "user_id": user,
            "item_id": item,
            "truth": truth,
            "prediction": pred,
            "error": pred - truth,
        }
        for user, item, truth, pred in predictions
    ]
    report = EvalReport(count=len(per_pair), mae=mae, rmse=rmse, per_pair=per_pair)
    if quality_scores is not None:
        quality = [
            {"user_id": u, "item_id": i, "score": s} for u, i, s in quality_scores
        ]
        if quality:
            report.quality_mean = sum(q["score"] for q in quality) / len(quality)
            report.quality_per_pair = quality
    return report


def save_report(report: EvalReport, json_path, table_path=None):
    json_path = Path(json_path)
    tmp = json_path.with_suffix(json_path.suffix + ".tmp")
    tmp.write_text(
        json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n",
        encoding="utf-8",
    )
    tmp.replace(json_path)
    if table_path is not None:
        table_path = Path(table_path)
        tmp = table_path.with_suffix(table_path.suffix + ".tmp")
        tmp.write_text(format_table(report), encoding="utf-8")
        tmp.replace(table_path)


def load_report(json_path) -> EvalReport:
    with Path(json_path).open(encoding="utf-8") as fh:
        return EvalReport.from_dict(json.load(fh))


def load_external_scores(path) -> list[tuple[str, str, float]]:
    """Import externally computed per-pair scores (user, item, score lines)."""
    scores = []
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            scores.append((rec["user_id"], rec["item_id"], float(rec["score"])))
    return scores


def format_table(*reports: EvalReport, names=None) -> str:
    """Plain-text side-by-side metric table."""
    names = list(names or [f"run{i + 1}" for i in range(len(reports))])
    lines = [f"{'name':<16} {'count':>8} {'MAE':>10} {'RMSE':>10} {'quality':>10}"]
    for name, report in zip(names, reports):
        quality = (
            f"{report.quality_mean:10.2f}" if report.quality_mean is not None else f"{'-':>10}"
        )
        lines.append(
            f"{name:<16} {report.count:>8d} {report.mae:>10.4f} "
            f"{report.rmse:>10.4f} {quality}"
        )
    return "\n".join(lines) + "\n"
