"""Rule-based format critics: response parsing, answer uniqueness, exact dedup.

The accepted response grammar is a single pair of the shape

    <question text>? (answer: <answer text>)

with optional surrounding whitespace and an optional trailing period after
the closing parenthesis. Anything else - missing question mark, missing
answer tail, multiple pairs, empty components - is rejected with a verdict,
never an exception.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

VALID = "valid"
MALFORMED = "malformed"
NON_UNIQUE = "non_unique_answer"
DUPLICATE = "duplicate"
UNANSWERABLE = "unanswerable"
UNDETERMINED = "undetermined"

STATUSES = (MALFORMED, NON_UNIQUE, DUPLICATE, UNANSWERABLE, UNDETERMINED, VALID)

_PAIR_RE = re.compile(
    r"^\s*(?P<question>[^?]*?\?)\s*\(answer:\s*(?P<answer>[^()]+?)\s*\)\s*\.?\s*$"
)


@dataclass(frozen=True)
class ParsedQA:
    question: str
    answer: str
    raw: str

    def render(self) -> str:
        return f"{self.question} (answer: {self.answer})"


@dataclass(frozen=True)
class CriticVerdict:
    status: str
    detail: str


def parse_response(raw: str) -> ParsedQA | CriticVerdict:
    """Parse a single "Q? (answer: A)" pair or return a malformed verdict."""
    if raw is None:
        return CriticVerdict(MALFORMED, "empty response")
    m = _PAIR_RE.match(raw)
    if m is None:
        if "?" not in raw:
            return CriticVerdict(MALFORMED, "no question mark")
        if "(answer:" not in raw:
            return CriticVerdict(MALFORMED, "missing (answer: ...) tail")
        return CriticVerdict(MALFORMED, "does not match the single-pair grammar")
    question = m.group("question").strip()
    answer = m.group("answer").strip()
    if question == "?" or not question:
        return CriticVerdict(MALFORMED, "empty question")
    if not answer:
        return CriticVerdict(MALFORMED, "empty answer")
    # A second question mark after the first pair means multiple pairs were
    # emitted; the grammar above already rejects them, but a question that
    # itself contains "(answer:" is also suspicious enough to reject.
    if "(answer:" in question:
        return CriticVerdict(MALFORMED, "multiple question-answer pairs")
    return ParsedQA(question=question, answer=answer, raw=raw)


def count_occurrences(needle: str, haystack: str, word_boundary: bool = False) -> int:
    """Occurrences of needle in haystack; overlapping matches counted."""
    if not needle:
        return 0
    if word_boundary:
        pattern = r"(?<!\w)" + re.escape(needle) + r"(?!\w)"
        return len(re.findall(pattern, haystack))
    count = 0
    start = 0
    while True:
        idx = haystack.find(needle, start)
        if idx < 0:
            return count
        count += 1
        start = idx + 1


def check_unique_answer(answer: str, context_text: str,
                        word_boundary: bool = False) -> CriticVerdict:
    """Valid iff the answer occurs exactly once in the context text.

    Zero occurrences and repeated occurrences both fail: an absent answer is
    unanswerable from the passage and a repeated one is ambiguous.
    """
    n = count_occurrences(answer, context_text, word_boundary=word_boundary)
    if n == 1:
        return CriticVerdict(VALID, "answer occurs exactly once")
    return CriticVerdict(NON_UNIQUE, f"answer occurs {n} times in context")


def dedup(samples: Sequence[ParsedQA]) -> tuple[list[ParsedQA], list[tuple[ParsedQA, CriticVerdict]]]:
    """Exact-string dedup within one context group; first occurrence wins."""
    seen: set[str] = set()
    kept: list[ParsedQA] = []
    dropped: list[tuple[ParsedQA, CriticVerdict]] = []
    for s in samples:
        if s.raw in seen:
            dropped.append((s, CriticVerdict(DUPLICATE, "exact duplicate within context")))
        else:
            seen.add(s.raw)
            kept.append(s)
    return kept, dropped


@dataclass
class CriticResult:
    valid: list[dict]
    rejections: list[dict]
    counts: Counter


def run_critics(batch: Sequence[dict], contexts: dict[str, str],
                word_boundary: bool = False) -> CriticResult:
    """Apply parse -> uniqueness -> dedup; first failing stage wins.

    `batch` items are {context_id, raw, ...}; `contexts` maps context_id to
    passage text. Input order is preserved and no sample is dropped
    silently: |valid| + |rejections| == |batch|.
    """
    counts: Counter = Counter()
    valid: list[dict] = []
    rejections: list[dict] = []
    seen_by_context: dict[str, set[str]] = {}

    for item in batch:
        cid = item["context_id"]
        raw = item["raw"]
        parsed = parse_response(raw)
        if isinstance(parsed, CriticVerdict):
            counts[parsed.status] += 1
            rejections.append({**item, "status": parsed.status, "detail": parsed.detail})
            continue
        uniq = check_unique_answer(parsed.answer, contexts[cid],
                                   word_boundary=word_boundary)
        if uniq.status != VALID:
            counts[uniq.status] += 1
            rejections.append({**item, "status": uniq.status, "detail": uniq.detail})
            continue
        seen = seen_by_context.setdefault(cid, set())
        if parsed.raw in seen:
            counts[DUPLICATE] += 1
            rejections.append({**item, "status": DUPLICATE,
                               "detail": "exact duplicate within context"})
            continue
        seen.add(parsed.raw)
        counts[VALID] += 1
        valid.append({**item, "question": parsed.question, "answer": parsed.answer})
    return CriticResult(valid=valid, rejections=rejections, counts=counts)


def error_distribution(critic_counts: Counter | dict,
                       adjudications: Optional[Iterable[str]] = None) -> dict[str, float]:
    """Proportions over the failure taxonomy, judge verdicts folded in.

    Samples the critics passed can be reclassified by the judges as
    unanswerable or undetermined; only unanimously answerable samples stay
    valid. Proportions sum to 1 within 1e-9.
    """
    counts = Counter(critic_counts)
    if adjudications is not None:
        judged = Counter(adjudications)
        n_judged = sum(judged.values())
        if n_judged > counts.get(VALID, 0):
            raise ValueError("more adjudications than critic-valid samples")
        counts[VALID] -= n_judged
        counts[UNANSWERABLE] += judged.get("unanswerable", 0)
        counts[UNDETERMINED] += judged.get("undetermined", 0)
        counts[VALID] += judged.get("answerable", 0)
    total = sum(counts.values())
    if total == 0:
        raise ValueError("empty report: no samples to distribute")
    return {status: counts.get(status, 0) / total for status in STATUSES}
