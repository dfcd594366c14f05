"""Pipeline configuration: schema, defaults, all-at-once validation."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

from .corpus import GenerationConfig, SplitConfig
from .ppo import PPOConfig
from .reward import RMTrainConfig


class ConfigValidationError(ValueError):
    """Carries every violation found, not just the first."""

    def __init__(self, errors: list[str]):
        self.errors = errors
        super().__init__("; ".join(errors))


@dataclass
class BackendConfig:
    generate: str = "stub"            # "stub" or a base URL
    answer: str = "stub"
    mlm: str = "stub"
    judge: str = "stub"
    reward: str = "stub"
    answer_ids: list[str] = field(default_factory=lambda: ["qa_a", "qa_b", "qa_c"])
    judge_ids: list[str] = field(default_factory=lambda: ["judge_a", "judge_b"])


@dataclass
class PipelineConfig:
    workdir: Path
    train_file: Path
    dev_file: Path
    parses_file: Optional[Path] = None
    backends: BackendConfig = field(default_factory=BackendConfig)
    generation: GenerationConfig = field(default_factory=GenerationConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    rm: RMTrainConfig = field(default_factory=RMTrainConfig)
    ppo: PPOConfig = field(default_factory=PPOConfig)
    n_runs: int = 1
    dev_fraction: float = 0.1
    seed: int = 0
    concurrency: int = 8
    raw: dict = field(default_factory=dict)

    def seed_for(self, stage: str) -> int:
        """Per-stage seed derived from the global seed unless overridden."""
        overrides = self.raw.get("seeds", {})
        if stage in overrides:
            return int(overrides[stage])
        return self.seed

    def config_hash_payload(self) -> dict:
        payload = dict(self.raw)
        payload.setdefault("seed", self.seed)
        return payload


_KNOWN_TOP_KEYS = {"workdir", "train_file", "dev_file", "parses_file", "backends",
                   "generation", "split", "rm", "ppo", "n_runs", "dev_fraction",
                   "seed", "seeds", "concurrency"}


def validate_config(path: str | Path, seed_override: Optional[int] = None,
                    stub_backends: bool = False) -> PipelineConfig:
    """Parse and validate a JSON pipeline config, reporting all violations."""
    path = Path(path)
    errors: list[str] = []
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigValidationError([f"config file not found: {path}"])
    except json.JSONDecodeError as exc:
        raise ConfigValidationError([f"config is not valid JSON: {exc}"])

    if not isinstance(raw, dict):
        raise ConfigValidationError(["config root must be a JSON object"])

    for key in raw:
        if key not in _KNOWN_TOP_KEYS:
            errors.append(f"unknown config key '{key}'")

    def need(key: str, typ=str) -> Any:
        if key not in raw:
            errors.append(f"missing required key '{key}'")
            return None
        return raw[key]

    workdir = need("workdir")
    train_file = need("train_file")
    dev_file = need("dev_file")

    gen_raw = raw.get("generation", {})
    generation = None
    try:
        generation = GenerationConfig(**{k: v for k, v in gen_raw.items()
                                         if k != "n_runs"})
    except (TypeError, ValueError) as exc:
        errors.append(f"generation: {exc}")
    # Re-check the individual bounds so multiple violations all surface.
    if isinstance(gen_raw, dict):
        if gen_raw.get("temperature", 1) <= 0:
            _append_once(errors, "generation: temperature must be > 0")
        tp = gen_raw.get("top_p", 0.7)
        if not (0 < tp <= 1):
            _append_once(errors, "generation: top_p must lie in (0,1]")
        if gen_raw.get("top_k", 0) < 0:
            _append_once(errors, "generation: top_k must be >= 0")
        if gen_raw.get("repetition_penalty", 1.1) < 1:
            _append_once(errors, "generation: repetition_penalty must be >= 1")

    split_raw = raw.get("split", {})
    split = SplitConfig(
        test_contexts=split_raw.get("test_contexts", 500),
        human_contexts=split_raw.get("human_contexts", 50),
        max_prompt_chars=split_raw.get("max_prompt_chars", 12_000),
    )
    if split.test_contexts < 0 or split.human_contexts < 0:
        errors.append("split: context targets must be >= 0")
    if split.human_contexts > split.test_contexts:
        errors.append("split: human_contexts cannot exceed test_contexts")

    rm = None
    try:
        rm = RMTrainConfig(**raw.get("rm", {}))
    except (TypeError, ValueError) as exc:
        errors.append(f"rm: {exc}")

    ppo = None
    try:
        ppo = PPOConfig(**raw.get("ppo", {}))
    except (TypeError, ValueError) as exc:
        errors.append(f"ppo: {exc}")

    backends_raw = raw.get("backends", {})
    backends = BackendConfig(
        generate=backends_raw.get("generate", "stub"),
        answer=backends_raw.get("answer", "stub"),
        mlm=backends_raw.get("mlm", "stub"),
        judge=backends_raw.get("judge", "stub"),
        reward=backends_raw.get("reward", "stub"),
        answer_ids=backends_raw.get("answer_ids", ["qa_a", "qa_b", "qa_c"]),
        judge_ids=backends_raw.get("judge_ids", ["judge_a", "judge_b"]),
    )
    if stub_backends:
        backends.generate = backends.answer = backends.mlm = "stub"
        backends.judge = backends.reward = "stub"
    for role in ("generate", "answer", "mlm", "judge", "reward"):
        value = getattr(backends, role)
        if value != "stub" and not str(value).startswith("http"):
            errors.append(f"backends.{role}: must be 'stub' or an http(s) URL")
    if len(backends.judge_ids) != 2:
        errors.append("backends.judge_ids: exactly two judges are required")
    if not backends.answer_ids:
        errors.append("backends.answer_ids: at least one QA backend is required")

    n_runs = raw.get("n_runs", 1)
    if not isinstance(n_runs, int) or n_runs < 1:
        errors.append("n_runs must be a positive integer")
    dev_fraction = raw.get("dev_fraction", 0.1)
    if not (0 < dev_fraction < 1):
        errors.append("dev_fraction must lie in (0,1)")
    concurrency = raw.get("concurrency", 8)
    if not isinstance(concurrency, int) or concurrency < 1:
        errors.append("concurrency must be a positive integer")
    seed = seed_override if seed_override is not None else raw.get("seed", 0)
    if not isinstance(seed, int):
        errors.append("seed must be an integer")

    if errors:
        raise ConfigValidationError(errors)

    return PipelineConfig(
        workdir=Path(workdir),
        train_file=Path(train_file),
        dev_file=Path(dev_file),
        parses_file=Path(raw["parses_file"]) if raw.get("parses_file") else None,
        backends=backends, generation=generation, split=split, rm=rm, ppo=ppo,
        n_runs=n_runs, dev_fraction=dev_fraction, seed=seed,
        concurrency=concurrency, raw=raw,
    )


def _append_once(errors: list[str], msg: str) -> None:
    if msg not in errors:
        errors.append(msg)
