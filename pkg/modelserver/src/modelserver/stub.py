"""Deterministic stub backends for the wire protocol.

These rules are an independent implementation of the documented stub
contract (docs/stub-protocol.md in the pipeline repository) so that the
server and the pipeline's in-process stubs agree bit-exactly without the
server importing pipeline internals. Every reply is a pure function of the
request via an 8-byte SHA-256 prefix hash.
"""

from __future__ import annotations

import hashlib
import re
from typing import Optional, Sequence


def stable_hash(text: str) -> int:
    return int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "big")


_QUOTED_RE = re.compile(r"'([^']+)'")
_INPUT_SECTION_RE = re.compile(r"### Input\n(.*?)\n\n### Response", re.S)


# Canned answers for well-known exemplar questions, checked before the hash
# rules so documentation examples replay exactly.
FIXTURE_ANSWERS = {
    "Who received the flame from Chinese officials in Canberra?": "Agnes Shea",
}


def stub_answer(context: str, question: str, backend_id: str) -> str:
    if question in FIXTURE_ANSWERS:
        return FIXTURE_ANSWERS[question]
    h = stable_hash(f"answer|{backend_id}|{question}")
    r = h % 4
    quoted = _QUOTED_RE.search(question)
    if quoted and r in (0, 3):
        return quoted.group(1)
    if r == 2:
        words = context.split()
        return words[0] if words else ""
    return ""


def stub_generate(prompt: str, seed: int = 0) -> str:
    m = _INPUT_SECTION_RE.search(prompt)
    passage = m.group(1) if m else prompt
    words = [w.strip(".,;:!?()\"'") for w in passage.split()]
    words = [w for w in words if w]
    h = stable_hash(f"generate|{prompt}|{seed}")
    r = h % 8
    if r == 0 or not words:
        return "This output has no question or answer"
    if r == 1:
        w = words[stable_hash(f"generate|{prompt}") % len(words)]
        return f"What does the passage say about {w}? (answer: {w})"
    w = words[h % len(words)]
    return f"Which term appears alongside {w}? (answer: {w})"


def stub_mlm_logprob(text: str, word_indices: Sequence[int]) -> list[float]:
    return [-(0.5 + (stable_hash(f"mlm|{text}|{i}") % 1000) / 1000.0)
            for i in word_indices]


def stub_judge(prompt: str, judge_id: str) -> str:
    r = stable_hash(f"judge|{judge_id}|{prompt}") % 8
    if r == 0:
        return "I believe the answer is probably fine"
    if r in (1, 2):
        return "NO"
    return "YES"


def stub_reward(question: str, context: Optional[str] = None) -> float:
    return ((stable_hash(f"reward|{question}") % 2001) - 1000) / 500.0
