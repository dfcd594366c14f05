import json

import pytest
from hypothesis import settings

# Wall-clock deadlines are noise on a loaded CI box; correctness properties
# here don't depend on per-example timing.
settings.register_profile("no-deadline", deadline=None)
settings.load_profile("no-deadline")

CANBERRA_TEXT = (
    "Upon its arrival in Canberra, the Olympic flame was presented by Chinese "
    "officials to local Aboriginal elder Agnes Shea, of the Ngunnawal people. "
    "She, in turn, offered them a message stick."
)
CANBERRA_QUESTION = "Who received the flame from Chinese officials in Canberra?"
CANBERRA_ANSWER = "Agnes Shea"
CANBERRA_RESPONSE = f"{CANBERRA_QUESTION} (answer: {CANBERRA_ANSWER})"


def make_fixture_squad(n_contexts: int, questions_per_context: int = 4,
                       title: str = "fixture") -> dict:
    """Synthetic SQuAD v1 payload with unique-word answers.

    Gold answers are single-quoted inside the question text so the stub QA
    backend can sometimes echo them, giving a spread of difficulty scores.
    """
    paragraphs = []
    for i in range(n_contexts):
        words = [f"{title}w{i}x{j}" for j in range(questions_per_context)]
        sentences = [
            f"The site {words[j]} lies in sector {j} of district d{i}."
            for j in range(questions_per_context)
        ]
        context = " ".join(sentences)
        qas = []
        for j in range(questions_per_context):
            answer = words[j]
            start = context.find(answer)
            qas.append({
                "id": f"{title}-{i}-{j}",
                "question": f"Which site, namely '{answer}', lies in sector {j}?",
                "answers": [{"text": answer, "answer_start": start}],
            })
        paragraphs.append({"context": context, "qas": qas})
    return {"data": [{"title": title, "paragraphs": paragraphs}]}


@pytest.fixture
def canberra_squad(tmp_path):
    payload = {"data": [{"title": "Canberra", "paragraphs": [{
        "context": CANBERRA_TEXT,
        "qas": [{"id": "canberra-0", "question": CANBERRA_QUESTION,
                 "answers": [{"text": CANBERRA_ANSWER,
                              "answer_start": CANBERRA_TEXT.find(CANBERRA_ANSWER)}]}],
    }]}]}
    path = tmp_path / "canberra.json"
    path.write_text(json.dumps(payload))
    return path


@pytest.fixture
def fixture_files(tmp_path):
    """Desk-scale train/dev SQuAD files (5 train, 18 dev contexts)."""
    train = tmp_path / "train.json"
    dev = tmp_path / "dev.json"
    train.write_text(json.dumps(make_fixture_squad(5, title="train")))
    dev.write_text(json.dumps(make_fixture_squad(18, title="dev")))
    return train, dev


def pytest_terminal_summary(terminalreporter):
    """Print one [PASS]/[FAIL] line per acceptance criterion."""
    try:
        from test_acceptance import CRITERIA
    except ImportError:
        return
    lines = []
    for outcome, verdict in (("passed", "PASS"), ("failed", "FAIL")):
        for rep in terminalreporter.stats.get(outcome, []):
            if getattr(rep, "when", None) != "call":
                continue
            name = rep.nodeid.split("::")[-1]
            if "test_acceptance" in rep.nodeid and name in CRITERIA:
                lines.append((name, verdict))
    if not lines:
        return
    order = list(CRITERIA)
    lines.sort(key=lambda item: order.index(item[0]))
    terminalreporter.section("acceptance criteria")
    for name, verdict in lines:
        terminalreporter.write_line(f"[{verdict}] {CRITERIA[name]}")
