"""Toy question-generation environment with a planted difficulty signal.

A small symbol grammar produces questions of the shape

    what is the [marker...] <topic> ? ( answer : <fact> )

where optional marker words ("obscure", "archaic", "cryptic") plant the
difficulty signal: questions containing more markers are harder by
construction. This makes the full SFT -> reward-model -> PPO chain
verifiable on CPU in minutes.
"""

from __future__ import annotations

import random
from typing import Sequence

from .difficulty import ComparisonPair

MARKERS = ["obscure", "archaic", "cryptic"]
TOPICS = [f"t{i}" for i in range(20)]
FACTS = [f"f{i}" for i in range(20)]

VOCAB = (
    ["<pad>", "<bos>", "<eos>", "?", "(", ")", ":", "answer",
     "what", "is", "the", "of", "about", "topic", "fact"]
    + MARKERS + TOPICS + FACTS
)


def make_prompt(topic: str, fact: str) -> list[str]:
    return ["<bos>", "topic", topic, "fact", fact]


def make_question_symbols(topic: str, fact: str, markers: Sequence[str] = ()) -> list[str]:
    return (["what", "is", "the"] + list(markers) + [topic, "?",
            "(", "answer", ":", fact, ")", "<eos>"])


def detokenize(symbols: Sequence[str]) -> str:
    """Render generated symbols to surface text the format critics accept."""
    words = [s for s in symbols if s not in ("<bos>", "<eos>", "<pad>")]
    out = " ".join(words)
    out = out.replace(" ?", "?")
    out = out.replace("( ", "(").replace(" )", ")")
    out = out.replace("answer :", "answer:")
    return out


def make_sft_dataset(n: int, seed: int, marker_rate: float = 0.3
                     ) -> list[tuple[list[str], list[str]]]:
    """(prompt symbols, target symbols) pairs; a fraction carry one marker."""
    rng = random.Random(seed)
    data = []
    for _ in range(n):
        topic, fact = rng.choice(TOPICS), rng.choice(FACTS)
        markers = [rng.choice(MARKERS)] if rng.random() < marker_rate else []
        data.append((make_prompt(topic, fact),
                     make_question_symbols(topic, fact, markers)))
    return data


def make_prompts(n: int, seed: int) -> list[list[str]]:
    rng = random.Random(seed)
    return [make_prompt(rng.choice(TOPICS), rng.choice(FACTS)) for _ in range(n)]


def make_rm_corpus(n_pairs: int, seed: int, shuffle_labels: bool = False
                   ) -> list[ComparisonPair]:
    """Planted-signal preference pairs: chosen has strictly more markers.

    Marker counts play the difficulty score (0-3), so margins span 1-3.
    With shuffle_labels, chosen/rejected are swapped at random, destroying
    the signal while keeping the marginal text distribution.
    """
    rng = random.Random(seed)
    pairs = []
    for i in range(n_pairs):
        topic, fact = rng.choice(TOPICS), rng.choice(FACTS)
        hi = rng.randint(1, 3)
        lo = rng.randint(0, hi - 1)
        chosen = detokenize(make_question_symbols(
            topic, fact, [rng.choice(MARKERS) for _ in range(hi)]))
        rejected = detokenize(make_question_symbols(
            topic, fact, [rng.choice(MARKERS) for _ in range(lo)]))
        if shuffle_labels and rng.random() < 0.5:
            chosen, rejected = rejected, chosen
        pairs.append(ComparisonPair(
            context_id=f"toy-{i}", chosen=chosen, rejected=rejected,
            margin=hi - lo, chosen_id=f"toy-{i}-hi", rejected_id=f"toy-{i}-lo"))
    return pairs


def marker_count(text: str) -> int:
    words = text.replace("?", " ").split()
    return sum(1 for w in words if w in MARKERS)
