"""FastAPI app exposing the three model roles on the shared wire protocol.

Routes: POST /v1/generate, /v1/check, /v1/similarity. A role whose model is
not configured answers 501; malformed bodies answer 400; model failures
answer 500. All error bodies are {"error": str}.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from .scoring import CheckerModel, ScorerModel
from .seq2seq import GeneratorModel


@dataclass
class ServerConfig:
    generator_model: str | None = None
    checker_model: str | None = None
    scorer_model: str | None = None
    device: str = "cpu"
    port: int = 8400
    max_tokens: int = 128


class GenerateRequest(BaseModel):
    prompt: str
    max_tokens: int = Field(default=64, ge=1)


class CheckRequest(BaseModel):
    premises: list[str]
    conclusion: str


class SimilarityRequest(BaseModel):
    candidate: str
    reference: str


class RoleNotConfigured(Exception):
    def __init__(self, role: str):
        super().__init__(f"no model configured for role {role!r}")


def create_app(config: ServerConfig) -> FastAPI:
    generator = (GeneratorModel(config.generator_model, config.device)
                 if config.generator_model else None)
    checker = (CheckerModel.load(config.checker_model)
               if config.checker_model else None)
    scorer = (ScorerModel.load(config.scorer_model)
              if config.scorer_model else None)

    app = FastAPI(title="condec-modelserver")
    # models are not reentrant: serialize inference per process
    lock = threading.Lock()

    @app.exception_handler(RequestValidationError)
    async def malformed(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"error": str(exc)})

    @app.exception_handler(RoleNotConfigured)
    async def unconfigured(request: Request, exc: RoleNotConfigured):
        return JSONResponse(status_code=501, content={"error": str(exc)})

    @app.exception_handler(Exception)
    async def failure(request: Request, exc: Exception):
        return JSONResponse(status_code=500, content={"error": str(exc)})

    @app.post("/v1/generate")
    def generate(body: GenerateRequest):
        if generator is None:
            raise RoleNotConfigured("generator")
        with lock:
            text = generator.generate(body.prompt,
                                      min(body.max_tokens, config.max_tokens))
        return {"text": text}

    @app.post("/v1/check")
    def check(body: CheckRequest):
        if checker is None:
            raise RoleNotConfigured("checker")
        with lock:
            score = checker.check(body.premises, body.conclusion)
        return {"score": score}

    @app.post("/v1/similarity")
    def similarity(body: SimilarityRequest):
        if scorer is None:
            raise RoleNotConfigured("scorer")
        with lock:
            score = scorer.similarity(body.candidate, body.reference)
        return {"score": score}

    return app
