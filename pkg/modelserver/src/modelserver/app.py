"""FastAPI application exposing the backend wire protocol.

A single process multiplexes all five roles. Each role is configured in a
manifest mapping the role name to a model identifier; the identifier "stub"
selects the deterministic stub implementation. Real model identifiers are
resolved through MODEL_LOADERS, a registry that deployments extend; an
unknown identifier fails at startup, not at request time.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from . import stub

ROLES = ("generate", "answer", "mlm", "judge", "reward")


class StartupError(RuntimeError):
    """A role's model could not be resolved or loaded."""


class StubModels:
    """Role implementations backed by the deterministic stub rules."""

    def generate(self, prompt: str, config: dict, seed: int) -> str:
        return stub.stub_generate(prompt, seed)

    def answer(self, context: str, question: str, backend_id: str) -> str:
        return stub.stub_answer(context, question, backend_id)

    def mlm_logprob(self, text: str, word_indices: Sequence[int]) -> list[float]:
        return stub.stub_mlm_logprob(text, word_indices)

    def judge(self, prompt: str, judge_id: str) -> str:
        return stub.stub_judge(prompt, judge_id)

    def reward(self, question: str, context: Optional[str]) -> float:
        return stub.stub_reward(question, context)


# Deployments register real model loaders here: identifier -> zero-argument
# callable returning an object with the StubModels method surface.
MODEL_LOADERS: dict[str, Callable[[], object]] = {}


def resolve_models(manifest: dict[str, str]) -> dict[str, object]:
    models: dict[str, object] = {}
    shared_stub = StubModels()
    for role in ROLES:
        ident = manifest.get(role, "stub")
        if ident == "stub":
            models[role] = shared_stub
        elif ident in MODEL_LOADERS:
            try:
                models[role] = MODEL_LOADERS[ident]()
            except Exception as exc:
                raise StartupError(f"role '{role}': loading model "
                                   f"'{ident}' failed: {exc}") from exc
        else:
            raise StartupError(f"role '{role}': unknown model identifier "
                               f"'{ident}'")
    unknown = set(manifest) - set(ROLES)
    if unknown:
        raise StartupError(f"manifest names unknown roles: {sorted(unknown)}")
    return models


class GenerateRequest(BaseModel):
    id: str
    prompt: str
    seed: int = 0
    config: dict = Field(default_factory=dict)


class AnswerRequest(BaseModel):
    id: str
    context: str
    question: str
    backend_id: str = "qa"


class MlmRequest(BaseModel):
    id: str
    text: str
    word_indices: list[int]


class JudgeRequest(BaseModel):
    id: str
    prompt: str
    judge_id: str = "judge"


class RewardRequest(BaseModel):
    id: str
    question: str
    context: Optional[str] = None


def create_app(manifest: Optional[dict[str, str]] = None) -> FastAPI:
    models = resolve_models(manifest or {})
    app = FastAPI(title="mrc-modelserver")

    @app.exception_handler(Exception)
    async def on_error(request: Request, exc: Exception):
        return JSONResponse(status_code=500,
                            content={"error": {"code": "internal_error",
                                               "message": str(exc)}})

    @app.get("/v1/health")
    def health():
        return {"status": "ok", "roles": list(ROLES)}

    @app.post("/v1/generate")
    def generate(req: GenerateRequest):
        text = models["generate"].generate(req.prompt, req.config, req.seed)
        return {"id": req.id, "text": text}

    @app.post("/v1/answer")
    def answer(req: AnswerRequest):
        reply = models["answer"].answer(req.context, req.question, req.backend_id)
        return {"id": req.id, "answer": reply}

    @app.post("/v1/mlm_logprob")
    def mlm_logprob(req: MlmRequest):
        logprobs = models["mlm"].mlm_logprob(req.text, req.word_indices)
        return {"id": req.id, "logprobs": logprobs}

    @app.post("/v1/judge")
    def judge(req: JudgeRequest):
        text = models["judge"].judge(req.prompt, req.judge_id)
        return {"id": req.id, "text": text}

    @app.post("/v1/reward")
    def reward(req: RewardRequest):
        score = models["reward"].reward(req.question, req.context)
        return {"id": req.id, "score": score}

    return app
