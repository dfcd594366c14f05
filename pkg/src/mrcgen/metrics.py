"""Reference-free evaluation metrics.

Self-BLEU (diversity), positional bias of the answer span, syntactic
divergence over dependency parses, and QAScore via a masked-language-model
backend. Parses are consumed as CoNLL-U, never produced here.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .conllu import DependencyParse

NOT_COMPUTABLE = None

INTERROGATIVES = {"who", "what", "when", "where", "why", "which", "whose", "whom", "how"}
CONTENT_UPOS = {"NOUN", "PROPN", "VERB", "ADJ", "ADV", "NUM"}

BLEU_ORDER = 4


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu(hypothesis: str, references: Sequence[str], order: int = BLEU_ORDER) -> float:
    """Sentence BLEU with add-one smoothing on orders above 1.

    Unigram precision is unsmoothed, so fully disjoint texts score 0 and
    identical texts score exactly 1.
    """
    hyp = hypothesis.split()
    refs = [r.split() for r in references]
    if not hyp or not refs:
        return 0.0
    log_p = 0.0
    for n in range(1, order + 1):
        hyp_ngrams = _ngrams(hyp, n)
        total = sum(hyp_ngrams.values())
        matched = 0
        for gram, count in hyp_ngrams.items():
            best = max(_ngrams(ref, n).get(gram, 0) for ref in refs)
            matched += min(count, best)
        if n == 1:
            if matched == 0:
                return 0.0
            log_p += math.log(matched / total)
        else:
            log_p += math.log((matched + 1) / (total + 1))
    log_p /= order
    ref_len = min(refs, key=lambda r: (abs(len(r) - len(hyp)), len(r)))
    bp = 1.0 if len(hyp) >= len(ref_len) else math.exp(1 - len(ref_len) / len(hyp))
    return bp * math.exp(log_p)


def self_bleu(questions: Sequence[str]) -> Optional[float]:
    """Mean BLEU of each question against its siblings; needs >= 2 questions."""
    if len(questions) < 2:
        return NOT_COMPUTABLE
    scores = []
    for i, hyp in enumerate(questions):
        refs = [q for j, q in enumerate(questions) if j != i]
        scores.append(bleu(hyp, refs))
    return sum(scores) / len(scores)


def positional_bias(context_text: str, answer: str,
                    char_start: Optional[int] = None) -> float:
    """Answer position as a fraction through the whitespace-split passage.

    The answer span is merged into a single word; the value is the merged
    word's index over (merged word count - 1). A single-word merged context
    yields 0.
    """
    if char_start is None:
        char_start = context_text.find(answer)
        if char_start < 0:
            raise ValueError("answer not found in context")
    elif context_text[char_start:char_start + len(answer)] != answer:
        raise ValueError("answer does not occur at char_start")
    before = context_text[:char_start].split()
    after = context_text[char_start + len(answer):].split()
    merged_count = len(before) + 1 + len(after)
    if merged_count == 1:
        return 0.0
    return len(before) / (merged_count - 1)


def levenshtein(a: Sequence[str], b: Sequence[str]) -> int:
    """Edit distance between two label sequences (iterative DP)."""
    if len(a) < len(b):
        a, b = b, a
    previous = list(range(len(b) + 1))
    for i, sa in enumerate(a, start=1):
        current = [i]
        for j, sb in enumerate(b, start=1):
            cost = 0 if sa == sb else 1
            current.append(min(previous[j] + 1, current[j - 1] + 1, previous[j - 1] + cost))
        previous = current
    return previous[-1]


def find_interrogative(parse: DependencyParse) -> Optional[int]:
    for tok in parse.tokens:
        if tok.form.lower() in INTERROGATIVES or tok.lemma.lower() in INTERROGATIVES:
            return tok.index
    return None


def syntactic_divergence(question_parse: DependencyParse,
                         answer_parse: DependencyParse,
                         answer_span: Sequence[int],
                         aggregate: str = "min") -> Optional[float]:
    """Levenshtein distance between anchor->interrogative and anchor->answer
    dependency-label paths, minimized (or averaged) over shared lemmas.

    Anchors are content-word lemmas occurring in both sentences; the answer
    endpoint is the first token of the answer span. Returns None when no
    anchor or no interrogative word exists.
    """
    if not answer_span:
        raise ValueError("answer span must be non-empty")
    n = len(answer_parse.tokens)
    for idx in answer_span:
        if not (1 <= idx <= n):
            raise ValueError(f"answer span index {idx} outside the answer sentence")
    wh = find_interrogative(question_parse)
    if wh is None:
        return NOT_COMPUTABLE
    span = set(answer_span)

    def content_lemmas(parse: DependencyParse, exclude: set[int]) -> dict[str, int]:
        found: dict[str, int] = {}
        for tok in parse.tokens:
            if tok.index in exclude or tok.upos not in CONTENT_UPOS:
                continue
            found.setdefault(tok.lemma.lower(), tok.index)
        return found

    q_lemmas = content_lemmas(question_parse, {wh})
    a_lemmas = content_lemmas(answer_parse, span)
    anchors = sorted(set(q_lemmas) & set(a_lemmas))
    if not anchors:
        return NOT_COMPUTABLE
    target = answer_span[0]
    distances = []
    for lemma in anchors:
        q_path = question_parse.edge_path(q_lemmas[lemma], wh)
        a_path = answer_parse.edge_path(a_lemmas[lemma], target)
        distances.append(levenshtein(q_path, a_path))
    if aggregate == "mean":
        return sum(distances) / len(distances)
    return float(min(distances))


def qa_score(mlm_backend, context_text: str, question: str, answer: str) -> float:
    """Sum of masked-LM log-probabilities of the answer words, masked one at
    a time within the passage+question+answer layout."""
    words = answer.split()
    if not words:
        return 0.0
    text = f"{context_text} {question} {answer}"
    offset = len(f"{context_text} {question} ".split())
    indices = list(range(offset, offset + len(words)))
    logprobs = mlm_backend.mlm_logprob(text, indices)
    return float(sum(logprobs))


@dataclass
class MetricReport:
    per_sample: list[dict] = field(default_factory=list)
    summaries: dict = field(default_factory=dict)
    skipped: Counter = field(default_factory=Counter)
    n_samples: int = 0


def summarize(values: Sequence[float], buckets: int = 10) -> dict:
    if not values:
        return {"count": 0}
    lo, hi = min(values), max(values)
    mu = sum(values) / len(values)
    std = math.sqrt(sum((v - mu) ** 2 for v in values) / len(values))
    width = (hi - lo) / buckets if hi > lo else 1.0
    hist = [0] * buckets
    for v in values:
        hist[min(int((v - lo) / width), buckets - 1)] += 1
    return {"count": len(values), "mean": mu, "std": std,
            "min": lo, "max": hi, "histogram": hist,
            "bucket_edges": [lo + i * width for i in range(buckets + 1)]}


def metric_report(samples: Sequence[dict], contexts: dict[str, str],
                  parses: Optional[dict[str, dict]] = None,
                  mlm_backend=None,
                  enabled: Sequence[str] = ("self_bleu", "positional_bias",
                                            "syntactic_divergence", "qa_score"),
                  ) -> MetricReport:
    """Compute enabled metrics for critic-passed samples, counting skips.

    `samples` rows: {question_id, context_id, question, answer}. `parses`
    maps question_id to {question: DependencyParse, answer: DependencyParse,
    answer_span: [int]}.
    """
    report = MetricReport(n_samples=len(samples))
    enabled = set(enabled)
    values: dict[str, list[float]] = {m: [] for m in enabled}

    by_context: dict[str, list[str]] = {}
    for s in samples:
        by_context.setdefault(s["context_id"], []).append(s["question"])
    context_sb: dict[str, Optional[float]] = {}
    if "self_bleu" in enabled:
        for cid, questions in by_context.items():
            context_sb[cid] = self_bleu(questions)

    for s in samples:
        row: dict = {"question_id": s["question_id"]}
        if "self_bleu" in enabled:
            sb = context_sb.get(s["context_id"])
            if sb is None:
                row["self_bleu"] = "skipped:insufficient_questions"
                report.skipped["self_bleu:insufficient_questions"] += 1
            else:
                row["self_bleu"] = sb
                values["self_bleu"].append(sb)
        if "positional_bias" in enabled:
            try:
                pb = positional_bias(contexts[s["context_id"]], s["answer"])
                row["positional_bias"] = pb
                values["positional_bias"].append(pb)
            except ValueError:
                row["positional_bias"] = "skipped:answer_not_found"
                report.skipped["positional_bias:answer_not_found"] += 1
        if "syntactic_divergence" in enabled:
            entry = (parses or {}).get(s["question_id"])
            if entry is None:
                row["syntactic_divergence"] = "skipped:no_parse"
                report.skipped["syntactic_divergence:no_parse"] += 1
            else:
                sd = syntactic_divergence(entry["question"], entry["answer"],
                                          entry["answer_span"])
                if sd is None:
                    row["syntactic_divergence"] = "skipped:no_anchor"
                    report.skipped["syntactic_divergence:no_anchor"] += 1
                else:
                    row["syntactic_divergence"] = sd
                    values["syntactic_divergence"].append(sd)
        if "qa_score" in enabled:
            if mlm_backend is None:
                row["qa_score"] = "skipped:no_backend"
                report.skipped["qa_score:no_backend"] += 1
            else:
                qs = qa_score(mlm_backend, contexts[s["context_id"]],
                              s["question"], s["answer"])
                row["qa_score"] = qs
                values["qa_score"].append(qs)
        report.per_sample.append(row)

    for name in sorted(enabled):
        report.summaries[name] = summarize(values[name])
    return report
