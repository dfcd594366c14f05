"""Resumable file-based pipeline stages with a hash-keyed manifest.

Each stage declares input artifacts, validates them, writes outputs
atomically, and appends a manifest entry {stage, input hashes, config hash,
seed, timestamp}. Rerunning a stage with unchanged inputs, config and seed
is a no-op.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import torch

from . import corpus as corpus_mod
from . import critics as critics_mod
from . import difficulty as difficulty_mod
from . import judge as judge_mod
from . import metrics as metrics_mod
from . import ppo as ppo_mod
from . import reward as reward_mod
from . import toy as toy_mod
from .backends import make_backend
from .config import PipelineConfig
from .corpus import Corpus, Context, QAPair
from .ioutil import read_jsonl, sha256_file, sha256_text, write_json, write_jsonl

STAGES = ["ingest", "split", "sft-data", "score", "comparisons", "train-rm",
          "train-ppo-toy", "generate", "critic", "judge", "evaluate", "report"]


class DependencyError(RuntimeError):
    """A required input artifact is missing; names the stage that produces it."""


class ValidationError(ValueError):
    """An input artifact failed schema validation."""


@dataclass
class StageSpec:
    name: str
    inputs: Callable[[PipelineConfig], list[Path]]
    outputs: Callable[[PipelineConfig], list[Path]]
    run: Callable[[PipelineConfig], None]
    produced_by: dict[str, str]  # artifact filename -> producing stage


def _p(config: PipelineConfig, name: str) -> Path:
    return config.workdir / name


def _require_rows(path: Path, required: set[str], stage: str) -> list[dict]:
    rows = []
    for i, row in enumerate(read_jsonl(path), start=1):
        missing = required - set(row)
        if missing:
            raise ValidationError(f"{path}:{i}: missing fields {sorted(missing)}")
        rows.append(row)
    return rows


def _load_corpus(config: PipelineConfig, which: str) -> Corpus:
    ctx_rows = _require_rows(_p(config, f"corpus_{which}.jsonl"),
                             {"id", "title", "text"}, "ingest")
    q_rows = _require_rows(_p(config, f"questions_{which}.jsonl"),
                           {"id", "context_id", "question", "answers"}, "ingest")
    corpus = Corpus()
    by_ctx: dict[str, list[QAPair]] = {}
    for row in q_rows:
        qa = QAPair(id=row["id"], context_id=row["context_id"],
                    question=row["question"],
                    answers=[(a[0], a[1]) for a in row["answers"]])
        by_ctx.setdefault(row["context_id"], []).append(qa)
    for row in ctx_rows:
        ctx = Context(id=row["id"], title=row["title"], text=row["text"])
        corpus.add(ctx, by_ctx.get(ctx.id, []))
    return corpus


# --- stage implementations ----------------------------------------------------

def stage_ingest(config: PipelineConfig) -> None:
    for which, src in (("train", config.train_file), ("dev", config.dev_file)):
        corpus = corpus_mod.load_squad(src)
        write_jsonl(_p(config, f"corpus_{which}.jsonl"),
                    ({"id": c.id, "title": c.title, "text": c.text}
                     for c in (corpus.contexts[cid] for cid in sorted(corpus.contexts))))
        write_jsonl(_p(config, f"questions_{which}.jsonl"),
                    ({"id": qa.id, "context_id": qa.context_id,
                      "question": qa.question,
                      "answers": [[t, s] for t, s in qa.answers],
                      "offset_inconsistent": qa.offset_inconsistent}
                     for qa in (corpus.questions[qid] for qid in sorted(corpus.questions))))


def stage_split(config: PipelineConfig) -> None:
    train = _load_corpus(config, "train")
    dev = _load_corpus(config, "dev")
    splits = corpus_mod.build_splits(train, dev, config.split,
                                     seed=config.seed_for("split"))
    write_json(_p(config, "splits.json"), splits.manifest())


def _read_splits(config: PipelineConfig) -> dict:
    path = _p(config, "splits.json")
    with open(path, "r", encoding="utf-8") as fh:
        splits = json.load(fh)
    for key in ("train", "dev", "test", "human_test", "seed"):
        if key not in splits:
            raise ValidationError(f"{path}: missing '{key}'")
    return splits


def stage_sft_data(config: PipelineConfig) -> None:
    train = _load_corpus(config, "train")
    splits = _read_splits(config)
    records = corpus_mod.build_sft_dataset(train, splits["train"],
                                           seed=config.seed_for("canonical"),
                                           config=config.split)
    write_jsonl(_p(config, "sft.jsonl"), records)


def stage_score(config: PipelineConfig) -> None:
    dev = _load_corpus(config, "dev")
    splits = _read_splits(config)
    backend = make_backend(config.backends.answer == "stub", config.backends.answer)
    seed = config.seed_for("canonical")
    rows = []
    for cid in splits["dev"]:
        ctx = dev.contexts[cid]
        for qid in dev.by_context[cid]:
            qa = dev.questions[qid]
            if not qa.answers:
                continue
            gold = corpus_mod.canonical_answer_for(qa, seed)
            verdicts = [difficulty_mod.evaluate_question(
                            backend, ctx.text, qa.question, gold, backend_id=bid)
                        for bid in config.backends.answer_ids]
            rec = difficulty_mod.DifficultyRecord(
                question_id=qid, context_id=cid, verdicts=verdicts)
            rows.append({
                "question_id": qid, "context_id": cid, "gold": gold,
                "question": qa.question,
                "verdicts": {v.backend_id: {"predicted": v.predicted,
                                            "correct": v.correct}
                             for v in verdicts},
                "score": rec.score,
            })
    write_jsonl(_p(config, "difficulty.jsonl"), rows)


def stage_comparisons(config: PipelineConfig) -> None:
    rows = _require_rows(_p(config, "difficulty.jsonl"),
                         {"question_id", "context_id", "verdicts", "score"},
                         "score")
    dev = _load_corpus(config, "dev")
    records = []
    questions = {}
    for row in rows:
        verdicts = [difficulty_mod.BackendVerdict(bid, v["predicted"], v["correct"])
                    for bid, v in row["verdicts"].items()]
        records.append(difficulty_mod.DifficultyRecord(
            question_id=row["question_id"], context_id=row["context_id"],
            verdicts=verdicts))
        questions[row["question_id"]] = row["question"]
    context_texts = {cid: dev.contexts[cid].text for cid in dev.contexts}
    pairs = difficulty_mod.build_comparisons(records, questions, context_texts)
    train, devp = difficulty_mod.split_comparisons(
        pairs, config.dev_fraction, seed=config.seed_for("comparisons"))
    for name, subset in (("comparisons_train", train), ("comparisons_dev", devp)):
        write_jsonl(_p(config, f"{name}.jsonl"),
                    ({"context_id": p.context_id, "context_text": p.context_text,
                      "chosen": p.chosen, "rejected": p.rejected,
                      "margin": p.margin, "chosen_id": p.chosen_id,
                      "rejected_id": p.rejected_id} for p in subset))


def _read_pairs(path: Path) -> list[difficulty_mod.ComparisonPair]:
    rows = _require_rows(path, {"context_id", "chosen", "rejected", "margin"},
                         "comparisons")
    return [difficulty_mod.ComparisonPair(
                context_id=r["context_id"], chosen=r["chosen"],
                rejected=r["rejected"], margin=r["margin"],
                chosen_id=r.get("chosen_id", ""),
                rejected_id=r.get("rejected_id", ""),
                context_text=r.get("context_text", "")) for r in rows]


def stage_train_rm(config: PipelineConfig) -> None:
    train = _read_pairs(_p(config, "comparisons_train.jsonl"))
    dev = _read_pairs(_p(config, "comparisons_dev.jsonl"))
    rm_config = config.rm
    rm_config.seed = config.seed_for("rm")
    model, log = reward_mod.train_reward_model(train, rm_config, dev_pairs=dev)
    reward_mod.save_checkpoint(model, _p(config, "rm.ckpt"))
    write_jsonl(_p(config, "rm_log.jsonl"), log)


def stage_train_ppo_toy(config: PipelineConfig) -> None:
    """Self-contained toy SFT -> RM -> PPO chain verifying the RL machinery.

    Runs entirely on the toy grammar so it is CPU-cheap and independent of
    corpus scale; the real-scale recipe lives in the model-server docs.
    """
    seed = config.seed_for("ppo")
    torch.manual_seed(seed)
    policy = ppo_mod.PolicyModel(toy_mod.VOCAB, seed=seed)
    sft_data = toy_mod.make_sft_dataset(400, seed=seed)
    ppo_mod.train_sft(policy, sft_data, epochs=1, seed=seed)
    reference = ppo_mod.frozen_copy(policy)

    rm_pairs = toy_mod.make_rm_corpus(500, seed=seed)
    rm_config = reward_mod.RMTrainConfig(epochs=3, seed=seed)
    rm, _ = reward_mod.train_reward_model(rm_pairs, rm_config)

    prompts = toy_mod.make_prompts(16, seed=seed)
    ppo_config = config.ppo
    ppo_config.seed = seed
    gen_config = corpus_mod.GenerationConfig(max_new_tokens=16)
    curve = ppo_mod.train_ppo(policy, reference, rm.score, prompts,
                              ppo_config, gen_config, toy_mod.detokenize)
    write_jsonl(_p(config, "ppo_curve.jsonl"), curve)
    with open(_p(config, "toy_policy.ckpt"), "wb") as fh:
        torch.save({"vocab": policy.vocab, "state": policy.state_dict()}, fh)


def stage_generate(config: PipelineConfig) -> None:
    dev = _load_corpus(config, "dev")
    splits = _read_splits(config)
    backend = make_backend(config.backends.generate == "stub",
                           config.backends.generate)
    seed = config.seed_for("generate")
    rows = []
    for run in range(config.n_runs):
        for cid in splits["test"]:
            ctx = dev.contexts[cid]
            prompt = corpus_mod.format_prompt(ctx)
            text = backend.generate(prompt, config.generation,
                                    seed=seed * 10_007 + run)
            rows.append({"context_id": cid, "run": run, "raw": text})
    write_jsonl(_p(config, "generations.jsonl"), rows)


def stage_critic(config: PipelineConfig) -> None:
    rows = _require_rows(_p(config, "generations.jsonl"),
                         {"context_id", "run", "raw"}, "generate")
    dev = _load_corpus(config, "dev")
    contexts = {cid: ctx.text for cid, ctx in dev.contexts.items()}
    valid_rows, rejection_rows, counts = [], [], {}
    runs = sorted({r["run"] for r in rows})
    for run in runs:
        batch = [r for r in rows if r["run"] == run]
        result = critics_mod.run_critics(batch, contexts)
        for i, item in enumerate(result.valid):
            item["question_id"] = f"g{run}-{item['context_id']}-{i}"
        valid_rows.extend(result.valid)
        rejection_rows.extend(result.rejections)
        for status, n in result.counts.items():
            counts[status] = counts.get(status, 0) + n
    write_jsonl(_p(config, "valid.jsonl"), valid_rows)
    write_jsonl(_p(config, "rejections.jsonl"), rejection_rows)
    write_json(_p(config, "critic_counts.json"), counts)


def stage_judge(config: PipelineConfig) -> None:
    valid = _require_rows(_p(config, "valid.jsonl"),
                          {"context_id", "question", "answer", "question_id"},
                          "critic")
    dev = _load_corpus(config, "dev")
    backend = make_backend(config.backends.judge == "stub", config.backends.judge)
    judge_a, judge_b = config.backends.judge_ids
    rows = []
    for item in valid:
        ctx_text = dev.contexts[item["context_id"]].text
        va = judge_mod.judge_sample(backend, ctx_text, item["question"],
                                    item["answer"], judge_a)
        vb = judge_mod.judge_sample(backend, ctx_text, item["question"],
                                    item["answer"], judge_b)
        rows.append({"question_id": item["question_id"],
                     "context_id": item["context_id"], "run": item.get("run", 0),
                     "labels": {judge_a: va.label, judge_b: vb.label},
                     "raw": {judge_a: va.raw, judge_b: vb.raw},
                     "adjudication": judge_mod.adjudicate(va.label, vb.label)})
    write_jsonl(_p(config, "judgments.jsonl"), rows)

    paired = [(r["labels"][judge_a], r["labels"][judge_b]) for r in rows
              if judge_mod.INVALID not in (r["labels"][judge_a], r["labels"][judge_b])]
    summary = {"n": len(rows)}
    for status in (judge_mod.ANSWERABLE, judge_mod.UNANSWERABLE, judge_mod.UNDETERMINED):
        summary[status] = (sum(1 for r in rows if r["adjudication"] == status) / len(rows)
                          ) if rows else 0.0
    if paired:
        summary["kappa"] = judge_mod.cohens_kappa([a for a, _ in paired],
                                                  [b for _, b in paired])
    write_json(_p(config, "judge_summary.json"), summary)


def stage_evaluate(config: PipelineConfig) -> None:
    valid = _require_rows(_p(config, "valid.jsonl"),
                          {"context_id", "question", "answer", "question_id"},
                          "critic")
    judgments = _require_rows(_p(config, "judgments.jsonl"),
                              {"question_id", "adjudication"}, "judge")
    dev = _load_corpus(config, "dev")
    contexts = {cid: ctx.text for cid, ctx in dev.contexts.items()}
    adjudication = {r["question_id"]: r["adjudication"] for r in judgments}
    answerable = [v for v in valid
                  if adjudication.get(v["question_id"]) == judge_mod.ANSWERABLE]

    mlm = make_backend(config.backends.mlm == "stub", config.backends.mlm)
    report = metrics_mod.metric_report(answerable, contexts, parses=None,
                                       mlm_backend=mlm)
    write_jsonl(_p(config, "metrics.jsonl"), report.per_sample)
    write_json(_p(config, "metric_summaries.json"),
               {"summaries": report.summaries,
                "skipped": dict(report.skipped),
                "n_samples": report.n_samples})

    qa_backend = make_backend(config.backends.answer == "stub",
                              config.backends.answer)
    runs = []
    for run in sorted({v.get("run", 0) for v in answerable}):
        subset = [v for v in answerable if v.get("run", 0) == run]
        accs = {}
        for bid in config.backends.answer_ids:
            verdicts = [difficulty_mod.evaluate_question(
                            qa_backend, contexts[v["context_id"]],
                            v["question"], v["answer"], backend_id=bid)
                        for v in subset]
            accs[bid] = (sum(1 for v in verdicts if v.correct) / len(verdicts)
                         ) if verdicts else 0.0
        runs.append({"accuracies": accs, "total_valid": len(subset)})
    accuracy = difficulty_mod.accuracy_report(runs) if runs else {"n_runs": 0}
    write_json(_p(config, "accuracy.json"), accuracy)


def stage_report(config: PipelineConfig) -> None:
    from . import report as report_mod
    report_mod.build_report(config)


# --- stage table and runner ---------------------------------------------------

def _spec(name: str, inputs: list[str], outputs: list[str],
          run: Callable[[PipelineConfig], None],
          produced_by: dict[str, str]) -> StageSpec:
    return StageSpec(
        name=name,
        inputs=lambda c, ins=inputs: [_p(c, i) if not i.startswith("@") else Path(i[1:])
                                      for i in ins],
        outputs=lambda c, outs=outputs: [_p(c, o) for o in outs],
        run=run, produced_by=produced_by)


def stage_table(config: PipelineConfig) -> dict[str, StageSpec]:
    corpora = ["corpus_train.jsonl", "questions_train.jsonl",
               "corpus_dev.jsonl", "questions_dev.jsonl"]
    table = {}

    def add(name, inputs, outputs, run, produced_by):
        table[name] = _spec(name, inputs, outputs, run, produced_by)

    add("ingest", [f"@{config.train_file}", f"@{config.dev_file}"], corpora,
        stage_ingest, {})
    add("split", corpora, ["splits.json"], stage_split,
        {c: "ingest" for c in corpora})
    add("sft-data", corpora[:2] + ["splits.json"], ["sft.jsonl"], stage_sft_data,
        {"splits.json": "split", corpora[0]: "ingest", corpora[1]: "ingest"})
    add("score", corpora[2:] + ["splits.json"], ["difficulty.jsonl"], stage_score,
        {"splits.json": "split", corpora[2]: "ingest", corpora[3]: "ingest"})
    add("comparisons", ["difficulty.jsonl"] + corpora[2:],
        ["comparisons_train.jsonl", "comparisons_dev.jsonl"], stage_comparisons,
        {"difficulty.jsonl": "score"})
    add("train-rm", ["comparisons_train.jsonl", "comparisons_dev.jsonl"],
        ["rm.ckpt", "rm_log.jsonl"], stage_train_rm,
        {"comparisons_train.jsonl": "comparisons",
         "comparisons_dev.jsonl": "comparisons"})
    add("train-ppo-toy", [], ["ppo_curve.jsonl", "toy_policy.ckpt"],
        stage_train_ppo_toy, {})
    add("generate", corpora[2:] + ["splits.json"], ["generations.jsonl"],
        stage_generate, {"splits.json": "split"})
    add("critic", ["generations.jsonl"] + corpora[2:],
        ["valid.jsonl", "rejections.jsonl", "critic_counts.json"], stage_critic,
        {"generations.jsonl": "generate"})
    add("judge", ["valid.jsonl"] + corpora[2:],
        ["judgments.jsonl", "judge_summary.json"], stage_judge,
        {"valid.jsonl": "critic"})
    add("evaluate", ["valid.jsonl", "judgments.jsonl"] + corpora[2:],
        ["metrics.jsonl", "metric_summaries.json", "accuracy.json"],
        stage_evaluate, {"valid.jsonl": "critic", "judgments.jsonl": "judge"})
    add("report", ["critic_counts.json", "judgments.jsonl",
                   "metric_summaries.json", "accuracy.json", "ppo_curve.jsonl",
                   "metrics.jsonl", "valid.jsonl"],
        ["report.json", "report.csv"], stage_report,
        {"critic_counts.json": "critic", "judgments.jsonl": "judge",
         "metric_summaries.json": "evaluate", "accuracy.json": "evaluate",
         "ppo_curve.jsonl": "train-ppo-toy", "metrics.jsonl": "evaluate",
         "valid.jsonl": "critic"})
    return table


def run_stage(name: str, config: PipelineConfig, force: bool = False) -> dict:
    """Run one stage with up-to-date detection and manifest bookkeeping."""
    table = stage_table(config)
    if name not in table:
        raise ValueError(f"unknown stage '{name}' (stages: {', '.join(STAGES)})")
    spec = table[name]
    config.workdir.mkdir(parents=True, exist_ok=True)

    input_hashes = {}
    for path in spec.inputs(config):
        if not path.exists():
            producer = spec.produced_by.get(path.name)
            hint = f" (produced by stage '{producer}')" if producer else ""
            raise DependencyError(f"stage '{name}': missing input {path}{hint}")
        input_hashes[str(path)] = sha256_file(path)

    config_hash = sha256_text(json.dumps(config.config_hash_payload(),
                                         sort_keys=True))
    seed = config.seed_for(name)
    manifest_path = config.workdir / "manifest.jsonl"
    if not force and manifest_path.exists():
        for entry in read_jsonl(manifest_path):
            if (entry.get("stage") == name
                    and entry.get("inputs") == input_hashes
                    and entry.get("config_hash") == config_hash
                    and entry.get("seed") == seed
                    and all(p.exists() for p in spec.outputs(config))):
                return {"stage": name, "status": "up-to-date"}

    spec.run(config)

    entry = {"stage": name, "inputs": input_hashes, "config_hash": config_hash,
             "seed": seed, "timestamp": time.time(),
             "outputs": [str(p) for p in spec.outputs(config)]}
    with open(manifest_path, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(entry, sort_keys=True) + "\n")
    return {"stage": name, "status": "completed"}


def run_all(config: PipelineConfig, force: bool = False,
            log: Optional[Callable[[str], None]] = None) -> list[dict]:
    results = []
    for name in STAGES:
        result = run_stage(name, config, force=force)
        if log:
            log(f"{result['stage']}: {result['status']}")
        results.append(result)
    return results
