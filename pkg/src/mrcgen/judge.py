"""Answerability adjudication by two LLM judges under a unanimity rule."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Sequence

YES = "YES"
NO = "NO"
INVALID = "INVALID"

ANSWERABLE = "answerable"
UNANSWERABLE = "unanswerable"
UNDETERMINED = "undetermined"

JUDGE_TEMPLATE = (
    "Following is a text, a question and an answer. You must determine whether "
    "the provided answer is a correct span-extraction response to the question. "
    "If there are multiple plausible answers in the text, the answer should be "
    "the most relevant or accurate one. If there are multiple equally plausible "
    "answers in the text, respond \"NO\". If the provided answer is incomplete "
    "or contains excess information, respond \"NO\". If the answer does not "
    "correctly answer the question, respond \"NO\". Only if the answer is "
    "correct and does not breach the aforementioned requirements, respond with "
    "\"YES\".\n"
    "Text: {text}\n"
    "Question: {question}\n"
    "Answer: {answer}\n\n"
    "Respond with only \"YES\" or \"NO\" in response to this task. "
    "Do NOT provide any other text or reasoning."
)


@dataclass(frozen=True)
class JudgeVerdict:
    judge_id: str
    label: str
    raw: str


def render_judge_prompt(context_text: str, question: str, answer: str) -> str:
    if not answer:
        raise ValueError("judge prompts require a non-empty answer")
    return JUDGE_TEMPLATE.format(text=context_text, question=question, answer=answer)


def parse_judge_reply(raw: str) -> str:
    """Strict YES/NO parsing: trimmed, case-insensitive, trailing period allowed."""
    if raw is None:
        return INVALID
    cleaned = raw.strip().rstrip(".").strip().lower()
    if cleaned == "yes":
        return YES
    if cleaned == "no":
        return NO
    return INVALID


def adjudicate(a: str, b: str) -> str:
    """Unanimity rule: both YES -> answerable, both NO -> unanswerable,
    anything else (including INVALID) -> undetermined."""
    if a == YES and b == YES:
        return ANSWERABLE
    if a == NO and b == NO:
        return UNANSWERABLE
    return UNDETERMINED


def judge_sample(backend, context_text: str, question: str, answer: str,
                 judge_id: str) -> JudgeVerdict:
    """Query one judge; an INVALID reply gets one automatic retry."""
    prompt = render_judge_prompt(context_text, question, answer)
    raw = backend.judge(prompt, judge_id=judge_id)
    label = parse_judge_reply(raw)
    if label == INVALID:
        raw = backend.judge(prompt, judge_id=judge_id)
        label = parse_judge_reply(raw)
    return JudgeVerdict(judge_id=judge_id, label=label, raw=raw)


def cohens_kappa(labels_a: Sequence[str], labels_b: Sequence[str]) -> float:
    """Chance-corrected agreement with marginal-product expected agreement.

    INVALID labels must be excluded pairwise by the caller. When expected
    agreement is 1 (both raters degenerate), kappa is 1.0 for perfect
    observed agreement and 0.0 otherwise.
    """
    if len(labels_a) != len(labels_b):
        raise ValueError("label lists must have equal length")
    if not labels_a:
        raise ValueError("label lists must be non-empty")
    n = len(labels_a)
    p_o = sum(1 for a, b in zip(labels_a, labels_b) if a == b) / n
    counts_a = Counter(labels_a)
    counts_b = Counter(labels_b)
    p_e = sum(counts_a[k] * counts_b.get(k, 0) for k in counts_a) / (n * n)
    if p_e == 1.0:
        return 1.0 if p_o == 1.0 else 0.0
    return (p_o - p_e) / (1.0 - p_e)
