"""FastAPI application exposing served models over the expert wire protocol.

Each configured role is mounted under ``/roles/{role}`` and exposes exactly
one route for its kind: generators ``POST .../generate``, classifiers
``POST .../classify``, embedders ``POST .../embed``. Request and response
field names follow the provider protocol bit for bit; non-2xx responses
carry ``{"error": message}``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel
from starlette.exceptions import HTTPException as StarletteHTTPException

from .models import (
    DEFAULT_SPECIAL_TOKENS,
    HashEmbedder,
    KeywordClassifier,
    NgramGenerator,
)

KINDS = ("generator", "classifier", "embedder")

DEFAULT_KEYWORDS = {
    "moral": ["thanks", "kind", "helps", "shares", "returns", "waits", "safe"],
    "immoral": ["grabs", "shoves", "ignores", "takes", "breaks"],
    "plausible": ["and", "the", "thanks", "after"],
    "implausible": ["never", "nothing"],
}


class ConfigError(Exception):
    pass


@dataclass
class ServedModel:
    role: str
    kind: str
    model_id: str
    backend: object
    decode_defaults: dict = field(default_factory=dict)


class GenerateRequest(BaseModel):
    prompt: str
    n: int | None = None
    top_p: float | None = None
    max_new_tokens: int | None = None
    seed: int | None = None


class ClassifyRequest(BaseModel):
    text: str
    labels: list[str]


class EmbedRequest(BaseModel):
    texts: list[str]


def _build_served_model(role: str, spec: dict) -> ServedModel:
    kind = spec.get("kind")
    if kind not in KINDS:
        raise ConfigError(f"role {role!r}: kind must be one of {KINDS}, got {kind!r}")
    model_id = spec.get("model", {"generator": "ngram", "classifier": "keyword", "embedder": "hash"}[kind])
    if kind == "generator":
        if model_id != "ngram":
            raise ConfigError(f"role {role!r}: unknown generator model {model_id!r}")
        kwargs = {"special_tokens": spec.get("special_tokens") or DEFAULT_SPECIAL_TOKENS}
        if spec.get("train_text_path"):
            kwargs["train_text"] = Path(spec["train_text_path"]).read_text(encoding="utf-8")
        backend = NgramGenerator(**kwargs)
    elif kind == "classifier":
        if model_id != "keyword":
            raise ConfigError(f"role {role!r}: unknown classifier model {model_id!r}")
        backend = KeywordClassifier(
            keywords=spec.get("keywords") or DEFAULT_KEYWORDS,
            temperature=spec.get("temperature", 1.0),
        )
    else:
        if model_id != "hash":
            raise ConfigError(f"role {role!r}: unknown embedder model {model_id!r}")
        backend = HashEmbedder(dim=spec.get("dim", 64), seed=spec.get("seed", 0))
    decode = dict({"n": 10, "top_p": 0.9, "max_new_tokens": 20, "seed": 0})
    decode.update(spec.get("decode", {}))
    return ServedModel(role, kind, model_id, backend, decode)


def load_config(path: str) -> dict:
    config = json.loads(Path(path).read_text(encoding="utf-8"))
    if "roles" not in config or not isinstance(config["roles"], dict):
        raise ConfigError("config must contain a 'roles' object")
    return config


def build_app(config: dict) -> FastAPI:
    app = FastAPI(title="expert model server")
    served: dict[str, ServedModel] = {
        role: _build_served_model(role, spec) for role, spec in config["roles"].items()
    }
    app.state.served = served

    @app.exception_handler(RequestValidationError)
    async def validation_error(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=422, content={"error": str(exc)})

    @app.exception_handler(StarletteHTTPException)
    async def http_error(request: Request, exc: StarletteHTTPException):
        return JSONResponse(status_code=exc.status_code, content={"error": str(exc.detail)})

    @app.exception_handler(Exception)
    async def internal_error(request: Request, exc: Exception):
        return JSONResponse(status_code=500, content={"error": str(exc)})

    def register(model: ServedModel) -> None:
        prefix = f"/roles/{model.role}"
        if model.kind == "generator":

            @app.post(f"{prefix}/generate")
            async def generate(body: GenerateRequest, _model=model):
                defaults = _model.decode_defaults
                texts = _model.backend.generate(
                    prompt=body.prompt,
                    n=body.n if body.n is not None else defaults["n"],
                    top_p=body.top_p if body.top_p is not None else defaults["top_p"],
                    max_new_tokens=(
                        body.max_new_tokens
                        if body.max_new_tokens is not None
                        else defaults["max_new_tokens"]
                    ),
                    seed=body.seed if body.seed is not None else defaults["seed"],
                )
                return {"candidates": [{"text": t} for t in texts]}

        elif model.kind == "classifier":

            @app.post(f"{prefix}/classify")
            async def classify(body: ClassifyRequest, _model=model):
                return {"probs": _model.backend.classify(body.text, body.labels)}

        else:

            @app.post(f"{prefix}/embed")
            async def embed(body: EmbedRequest, _model=model):
                return {"vectors": _model.backend.embed(body.texts)}

    for model in served.values():
        register(model)

    return app


def serve(config: dict, host: str = "127.0.0.1", port: int = 8800) -> None:
    import uvicorn

    uvicorn.run(build_app(config), host=host, port=port, log_level="info")
