"""Difficulty scoring from QA-backend failures and pairwise preference construction."""

from __future__ import annotations

import math
import random
import re
import string
from dataclasses import dataclass, field
from itertools import combinations
from typing import Optional, Sequence

_ARTICLES_RE = re.compile(r"\b(a|an|the)\b")
_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


def normalize_answer(text: str) -> str:
    """Exact-match normalization: lowercase, strip punctuation, drop
    English articles, collapse whitespace."""
    text = text.lower()
    text = text.translate(_PUNCT_TABLE)
    text = _ARTICLES_RE.sub(" ", text)
    return " ".join(text.split())


@dataclass(frozen=True)
class BackendVerdict:
    backend_id: str
    predicted: str
    correct: bool


@dataclass
class DifficultyRecord:
    question_id: str
    context_id: str
    verdicts: list[BackendVerdict]
    score: int = field(init=False)

    def __post_init__(self):
        self.score = difficulty_score(self.verdicts)


@dataclass(frozen=True)
class ComparisonPair:
    context_id: str
    chosen: str
    rejected: str
    margin: int
    chosen_id: str = ""
    rejected_id: str = ""
    context_text: str = ""

    def __post_init__(self):
        if self.margin < 1:
            raise ValueError("margin must be >= 1 (chosen strictly harder)")


class EvaluationError(RuntimeError):
    """A backend could not be queried; the question is skipped, not scored."""


def evaluate_question(backend, context_text: str, question: str, gold: str,
                      backend_id: Optional[str] = None) -> BackendVerdict:
    """Ask one extractive-QA backend and grade it by normalized exact match.

    Abstention (empty prediction) counts as incorrect: the gold questions
    are answerable by construction.
    """
    bid = backend_id or getattr(backend, "backend_id", "backend")
    try:
        predicted = backend.answer(context_text, question, backend_id=bid)
    except Exception as exc:
        raise EvaluationError(f"backend {bid} failed: {exc}") from exc
    correct = bool(predicted) and normalize_answer(predicted) == normalize_answer(gold)
    return BackendVerdict(backend_id=bid, predicted=predicted, correct=correct)


def difficulty_score(verdicts: Sequence[BackendVerdict]) -> int:
    """Number of backends that failed the question."""
    if not verdicts:
        raise ValueError("verdict list must be non-empty")
    return sum(1 for v in verdicts if not v.correct)


def build_comparisons(records: Sequence[DifficultyRecord],
                      questions: dict[str, str],
                      context_texts: Optional[dict[str, str]] = None) -> list[ComparisonPair]:
    """Emit one preference pair per unordered question pair with unequal scores.

    Pairs are built within a context; the higher-failure-count question is
    chosen, margin is the score difference, and equal scores are ties that
    emit nothing. Output order is deterministic: sorted by context id, then
    by the (question id, question id) pair.
    """
    by_context: dict[str, list[DifficultyRecord]] = {}
    for rec in records:
        by_context.setdefault(rec.context_id, []).append(rec)

    pairs: list[ComparisonPair] = []
    for cid in sorted(by_context):
        recs = sorted(by_context[cid], key=lambda r: r.question_id)
        ctx_text = (context_texts or {}).get(cid, "")
        for a, b in combinations(recs, 2):
            if a.score == b.score:
                continue
            hi, lo = (a, b) if a.score > b.score else (b, a)
            pairs.append(ComparisonPair(
                context_id=cid,
                chosen=questions[hi.question_id],
                rejected=questions[lo.question_id],
                margin=hi.score - lo.score,
                chosen_id=hi.question_id,
                rejected_id=lo.question_id,
                context_text=ctx_text,
            ))
    return pairs


def split_comparisons(pairs: Sequence[ComparisonPair], dev_fraction: float,
                      seed: int) -> tuple[list[ComparisonPair], list[ComparisonPair]]:
    """Split preference pairs by context id so no context straddles the split."""
    if not (0 < dev_fraction < 1):
        raise ValueError("dev_fraction must lie in (0,1)")
    context_ids = sorted({p.context_id for p in pairs})
    n_dev = max(1, round(len(context_ids) * dev_fraction))
    if n_dev >= len(context_ids):
        raise ValueError(
            f"cannot hold out {n_dev} of {len(context_ids)} comparison contexts")
    rng = random.Random(seed)
    dev_ids = set(rng.sample(context_ids, n_dev))
    train = [p for p in pairs if p.context_id not in dev_ids]
    dev = [p for p in pairs if p.context_id in dev_ids]
    return train, dev


def accuracy_report(runs: Sequence[dict]) -> dict:
    """Mean and population std of per-backend exact-match accuracy across runs.

    Each run is {"accuracies": {backend_id: float}, "total_valid": int}.
    Mirrors the per-backend accuracy / total-valid reporting layout.
    """
    if not runs:
        raise ValueError("at least one run required")
    backend_ids = sorted({b for run in runs for b in run["accuracies"]})
    report: dict = {"n_runs": len(runs), "backends": {}}
    for bid in backend_ids:
        vals = [run["accuracies"][bid] for run in runs if bid in run["accuracies"]]
        report["backends"][bid] = {"mean": _mean(vals), "std": _pstd(vals)}
    totals = [run["total_valid"] for run in runs if "total_valid" in run]
    if totals:
        report["total_valid"] = {"mean": _mean(totals), "std": _pstd(totals)}
    return report


def _mean(vals: Sequence[float]) -> float:
    return sum(vals) / len(vals)


def _pstd(vals: Sequence[float]) -> float:
    mu = _mean(vals)
    return math.sqrt(sum((v - mu) ** 2 for v in vals) / len(vals))
