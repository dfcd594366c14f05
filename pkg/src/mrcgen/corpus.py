"""SQuAD-format ingestion, deterministic splits, canonical answers and prompt rendering."""

from __future__ import annotations

import json
import random
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

from .ioutil import stable_hash

INSTRUCTION_SINGULAR = (
    "Write 1 answerable span extraction question and provide the correct answer "
    "based on the text."
)
# For n > 1 the count token and the two nouns pluralize; n = 1 reproduces the
# singular template verbatim.
INSTRUCTION_TEMPLATE = (
    "Write {n} answerable span extraction {questions} and provide the "
    "{correct_answers} based on the text."
)

DEFAULT_MAX_PROMPT_CHARS = 12_000


class SquadSchemaError(ValueError):
    """The input file does not conform to the SQuAD v1 layout."""


@dataclass(frozen=True)
class Context:
    id: str
    title: str
    text: str

    def __post_init__(self):
        if not self.text:
            raise ValueError(f"context {self.id}: empty text")


@dataclass
class QAPair:
    id: str
    context_id: str
    question: str
    answers: list[tuple[str, Optional[int]]]
    canonical_answer: Optional[str] = None
    offset_inconsistent: bool = False


@dataclass
class Corpus:
    contexts: dict[str, Context] = field(default_factory=dict)
    questions: dict[str, QAPair] = field(default_factory=dict)
    by_context: dict[str, list[str]] = field(default_factory=dict)

    def add(self, context: Context, qas: Sequence[QAPair]) -> None:
        if context.id in self.contexts:
            raise ValueError(f"duplicate context id {context.id}")
        self.contexts[context.id] = context
        self.by_context[context.id] = [qa.id for qa in qas]
        for qa in qas:
            self.questions[qa.id] = qa

    @property
    def n_contexts(self) -> int:
        return len(self.contexts)

    @property
    def n_questions(self) -> int:
        return len(self.questions)


@dataclass(frozen=True)
class GenerationConfig:
    temperature: float = 0.9
    top_p: float = 0.7
    top_k: int = 0
    repetition_penalty: float = 1.1
    max_new_tokens: int = 64

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be > 0")
        if not (0 < self.top_p <= 1):
            raise ValueError("top_p must lie in (0,1]")
        if self.top_k < 0:
            raise ValueError("top_k must be >= 0")
        if self.repetition_penalty < 1:
            raise ValueError("repetition_penalty must be >= 1")


def load_squad(path: str | Path) -> Corpus:
    """Load a SQuAD v1 JSON file into a Corpus.

    Every paragraph becomes a Context and every qas entry a QAPair with all
    listed answers retained. Answer offsets that do not match the context
    text are flagged, not rejected.
    """
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    except json.JSONDecodeError as exc:
        raise SquadSchemaError(f"{path}: malformed JSON: {exc}") from exc

    if not isinstance(payload, dict) or "data" not in payload:
        raise SquadSchemaError(f"{path}: missing top-level 'data' field")

    corpus = Corpus()
    for ai, article in enumerate(payload["data"]):
        title = article.get("title", f"article-{ai}")
        if "paragraphs" not in article:
            raise SquadSchemaError(f"{path}: data[{ai}] missing 'paragraphs'")
        for pi, para in enumerate(article["paragraphs"]):
            if "context" not in para or "qas" not in para:
                raise SquadSchemaError(
                    f"{path}: data[{ai}].paragraphs[{pi}] missing 'context' or 'qas'"
                )
            ctx = Context(id=f"{title}#{pi}" if "id" not in para else str(para["id"]),
                          title=title, text=para["context"])
            qas = []
            for qi, item in enumerate(para["qas"]):
                for key in ("id", "question", "answers"):
                    if key not in item:
                        raise SquadSchemaError(
                            f"{path}: data[{ai}].paragraphs[{pi}].qas[{qi}] missing '{key}'"
                        )
                answers = []
                inconsistent = False
                for ans in item["answers"]:
                    text = ans["text"]
                    start = ans.get("answer_start")
                    if start is not None and ctx.text[start:start + len(text)] != text:
                        inconsistent = True
                    answers.append((text, start))
                qas.append(QAPair(id=str(item["id"]), context_id=ctx.id,
                                  question=item["question"], answers=answers,
                                  offset_inconsistent=inconsistent))
            corpus.add(ctx, qas)
    return corpus


def canonical_answer(answers: Sequence[str], seed: int) -> str:
    """Most frequent answer string; seeded-uniform choice among ties."""
    if not answers:
        raise ValueError("answers must be non-empty")
    counts = Counter(answers)
    top = max(counts.values())
    tied = sorted(a for a, c in counts.items() if c == top)
    if len(tied) == 1:
        return tied[0]
    return random.Random(seed).choice(tied)


def canonical_answer_for(qa: QAPair, seed: int) -> str:
    """Canonical answer with tie randomness scoped per question id."""
    if qa.canonical_answer is not None:
        return qa.canonical_answer
    return canonical_answer([a for a, _ in qa.answers],
                            seed=stable_hash(f"canon|{seed}|{qa.id}"))


def format_prompt(context: Context, n_questions: int = 1) -> str:
    """Three-part instruction/input/response prompt for question generation."""
    if n_questions < 1:
        raise ValueError("n_questions must be >= 1")
    if n_questions == 1:
        instruction = INSTRUCTION_SINGULAR
    else:
        instruction = INSTRUCTION_TEMPLATE.format(
            n=n_questions, questions="questions", correct_answers="correct answers")
    return (
        f"### Instruction\n{instruction}\n\n"
        f"### Input\n{context.text}\n\n"
        f"### Response\n"
    )


def render_target(question: str, answer: str) -> str:
    return f"{question} (answer: {answer})"


@dataclass
class SplitConfig:
    test_contexts: int = 500
    human_contexts: int = 50
    max_prompt_chars: int = DEFAULT_MAX_PROMPT_CHARS
    # Optional hook to measure prompt length in model tokens instead of chars.
    length_fn: Optional[Callable[[str], int]] = None

    def measure(self, text: str) -> int:
        return self.length_fn(text) if self.length_fn else len(text)


@dataclass
class SplitSet:
    train: list[str]
    dev: list[str]
    test: list[str]
    human_test: list[str]
    seed: int
    config: SplitConfig

    def manifest(self) -> dict:
        return {
            "seed": self.seed,
            "config": {
                "test_contexts": self.config.test_contexts,
                "human_contexts": self.config.human_contexts,
                "max_prompt_chars": self.config.max_prompt_chars,
            },
            "train": self.train,
            "dev": self.dev,
            "test": self.test,
            "human_test": self.human_test,
        }


class CapacityError(RuntimeError):
    """Not enough contexts survive filtering to honor the split targets."""


def _eligible_context_ids(corpus: Corpus, config: SplitConfig, seed: int) -> list[str]:
    """Context ids with at least one question whose prompt+target fits the budget."""
    keep = []
    for cid in sorted(corpus.contexts):
        ctx = corpus.contexts[cid]
        prompt = format_prompt(ctx)
        ok = False
        for qid in corpus.by_context[cid]:
            qa = corpus.questions[qid]
            if not qa.answers:
                continue
            target = render_target(qa.question, canonical_answer_for(qa, seed))
            if config.measure(prompt + target) <= config.max_prompt_chars:
                ok = True
                break
        if ok:
            keep.append(cid)
    return keep


def build_splits(train_corpus: Corpus, dev_corpus: Corpus,
                 config: SplitConfig, seed: int) -> SplitSet:
    """Carve test and human-test context sets out of dev, leaving train untouched.

    Test contexts are drawn uniformly (seeded) from the length-filtered dev
    contexts; human-test contexts are drawn from the test set. Dev and test
    are disjoint by context id and the whole procedure is deterministic
    under (corpus, config, seed).
    """
    dev_ids = _eligible_context_ids(dev_corpus, config, seed)
    if len(dev_ids) < config.test_contexts:
        raise CapacityError(
            f"need {config.test_contexts} test contexts, only {len(dev_ids)} "
            f"eligible dev contexts (short by {config.test_contexts - len(dev_ids)})")
    if config.human_contexts > config.test_contexts:
        raise CapacityError("human_contexts target exceeds test_contexts target")

    rng = random.Random(seed)
    test = sorted(rng.sample(dev_ids, config.test_contexts))
    test_set = set(test)
    dev = [cid for cid in dev_ids if cid not in test_set]
    human = sorted(rng.sample(test, config.human_contexts)) if config.human_contexts else []
    train = sorted(train_corpus.contexts)
    return SplitSet(train=train, dev=dev, test=test, human_test=human,
                    seed=seed, config=config)


def build_sft_dataset(corpus: Corpus, context_ids: Sequence[str], seed: int,
                      config: Optional[SplitConfig] = None) -> list[dict]:
    """One (prompt, target) record per gold question, "Q? (answer: A)" targets.

    The prompt-length rule is applied here (prompt plus target measured
    together); filtered questions simply do not appear in the output.
    """
    config = config or SplitConfig()
    records = []
    for cid in context_ids:
        ctx = corpus.contexts[cid]
        prompt = format_prompt(ctx)
        for qid in corpus.by_context[cid]:
            qa = corpus.questions[qid]
            if not qa.answers:
                continue
            target = render_target(qa.question, canonical_answer_for(qa, seed))
            if config.measure(prompt + target) > config.max_prompt_chars:
                continue
            records.append({"prompt": prompt, "target": target,
                            "context_id": cid, "question_id": qid})
    return records


ZERO_SHOT_STAGE1 = (
    "Write one answerable span extraction question and its correct answer "
    "based on the following text.\n\n{text}"
)
ZERO_SHOT_STAGE2 = (
    "Extract the question and answer components from the following output and "
    "place them into a JSON file with the keys question and answer.\n\n{output}"
)


def zero_shot_generate(backend, context: Context,
                       gen_config: Optional[GenerationConfig] = None,
                       seed: int = 0) -> dict:
    """Two-stage zero-shot generation: free-form draft, then JSON extraction.

    Stage 1 samples at the configured (high) temperature; stage 2 re-prompts
    at temperature 0.2 to structure the draft. An unparseable stage-2 reply
    marks the sample malformed rather than raising.
    """
    gen_config = gen_config or GenerationConfig()
    stage1 = backend.generate(ZERO_SHOT_STAGE1.format(text=context.text),
                              gen_config, seed=seed)
    extract_config = GenerationConfig(
        temperature=0.2, top_p=gen_config.top_p, top_k=gen_config.top_k,
        repetition_penalty=gen_config.repetition_penalty,
        max_new_tokens=gen_config.max_new_tokens)
    stage2 = backend.generate(ZERO_SHOT_STAGE2.format(output=stage1),
                              extract_config, seed=seed)
    result = {"context_id": context.id, "stage1": stage1, "stage2": stage2,
              "question": None, "answer": None, "malformed": False}
    try:
        parsed = json.loads(stage2)
        result["question"] = parsed["question"]
        result["answer"] = parsed["answer"]
    except (json.JSONDecodeError, TypeError, KeyError):
        result["malformed"] = True
    return result
