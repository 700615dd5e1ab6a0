"""HTTP service exposing the backend protocol over placeholder or real models.

Behavioral contract: request bodies are validated against the shared wire
schemas (400 with ``{"error": ...}`` on violation), the client request id is
echoed in the ``x-m3kg-request-id`` header, 503 is returned while models are
loading, and a per-family queue depth limit answers 429 under back-pressure.
"""

from __future__ import annotations

import json
import logging
import threading
from contextlib import asynccontextmanager
from pathlib import Path

import jsonschema
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .config import AGENT_ROLES, AdapterConfig
from .kb import build_kb
from .models import build_model

logger = logging.getLogger(__name__)

REQUEST_ID_HEADER = "x-m3kg-request-id"


def _load_schemas(schemas_dir: Path) -> dict[str, dict]:
    schemas = {}
    for path in schemas_dir.glob("*.json"):
        schemas[path.stem] = json.loads(path.read_text("utf-8"))
    required = {
        "embed_request", "ground_visual_request", "ground_audio_request",
        "agent_request", "answer_request", "judge_request", "kb_search_request",
    }
    missing = required - set(schemas)
    if missing:
        raise FileNotFoundError(f"schemas dir {schemas_dir} is missing {sorted(missing)}")
    return schemas


def _error(status: int, message: str) -> JSONResponse:
    return JSONResponse(status_code=status, content={"error": message})


class _Gate:
    """Non-blocking per-family admission control; saturation answers 429."""

    def __init__(self, depth: int):
        self.semaphore = threading.BoundedSemaphore(depth) if depth > 0 else None
        self.depth = depth

    def acquire(self) -> bool:
        if self.depth <= 0:
            return False
        return self.semaphore.acquire(blocking=False)

    def release(self) -> None:
        if self.semaphore is not None:
            self.semaphore.release()


def create_app(config: AdapterConfig | None = None) -> FastAPI:
    config = config or AdapterConfig()
    schemas = _load_schemas(config.schemas_dir)

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        app.state.models = {
            "embedder": build_model(
                config.embedder,
                audio_dim=config.audio_dim,
                visual_dim=config.visual_dim,
                seed=config.seed,
            ),
            "visual_grounder": build_model(config.visual_grounder, seed=config.seed),
            "audio_grounder": build_model(config.audio_grounder, seed=config.seed),
            "agent": build_model(config.agent, seed=config.seed),
            "answerer": build_model(config.answerer, seed=config.seed),
            "judge": build_model(config.judge, seed=config.seed),
        }
        app.state.kb = build_kb(config.kb)
        app.state.loaded = True
        logger.info("adapter models loaded")
        yield
        app.state.loaded = False

    app = FastAPI(title="m3kg-adapter", lifespan=lifespan)
    app.state.loaded = False
    gates = {
        family: _Gate(config.queue_depth)
        for family in ("embed", "ground", "agent", "answer", "judge", "kb")
    }

    @app.middleware("http")
    async def request_id_and_readiness(request: Request, call_next):
        if not getattr(app.state, "loaded", False):
            response = _error(503, "models are loading")
        else:
            response = await call_next(request)
        request_id = request.headers.get(REQUEST_ID_HEADER)
        if request_id is not None:
            response.headers[REQUEST_ID_HEADER] = request_id
        return response

    async def _body(request: Request, schema_name: str):
        try:
            body = await request.json()
        except json.JSONDecodeError:
            return None, _error(400, "request body is not valid JSON")
        try:
            jsonschema.validate(body, schemas[schema_name])
        except jsonschema.ValidationError as exc:
            return None, _error(400, f"schema violation: {exc.message}")
        return body, None

    def _admitted(family: str):
        gate = gates[family]
        if not gate.acquire():
            return None
        return gate

    @app.post("/v1/embed")
    async def embed(request: Request):
        body, err = await _body(request, "embed_request")
        if err:
            return err
        gate = _admitted("embed")
        if gate is None:
            return _error(429, "embed queue is full")
        try:
            vector = app.state.models["embedder"].embed(body["modality"], body["content_ref"])
            return {"embedding": vector}
        finally:
            gate.release()

    @app.post("/v1/ground/visual")
    async def ground_visual(request: Request):
        body, err = await _body(request, "ground_visual_request")
        if err:
            return err
        gate = _admitted("ground")
        if gate is None:
            return _error(429, "grounding queue is full")
        try:
            confidences = app.state.models["visual_grounder"].detect(
                body["entity"], body["visual_ref"], body["frame_count"]
            )
            return {"confidences": confidences}
        finally:
            gate.release()

    @app.post("/v1/ground/audio")
    async def ground_audio(request: Request):
        body, err = await _body(request, "ground_audio_request")
        if err:
            return err
        gate = _admitted("ground")
        if gate is None:
            return _error(429, "grounding queue is full")
        try:
            score = app.state.models["audio_grounder"].score(
                body["sentence"], body["audio_ref"]
            )
            return {"score": score}
        finally:
            gate.release()

    @app.post("/v1/agent/{role}")
    async def agent(role: str, request: Request):
        if role not in AGENT_ROLES:
            return _error(404, f"unknown agent role {role!r}")
        body, err = await _body(request, "agent_request")
        if err:
            return err
        gate = _admitted("agent")
        if gate is None:
            return _error(429, "agent queue is full")
        try:
            return {"text": app.state.models["agent"].complete(body["prompt"], role=role)}
        finally:
            gate.release()

    @app.post("/v1/answer")
    async def answer(request: Request):
        body, err = await _body(request, "answer_request")
        if err:
            return err
        gate = _admitted("answer")
        if gate is None:
            return _error(429, "answer queue is full")
        try:
            return {"text": app.state.models["answerer"].complete(body["prompt"])}
        finally:
            gate.release()

    @app.post("/v1/judge")
    async def judge(request: Request):
        body, err = await _body(request, "judge_request")
        if err:
            return err
        gate = _admitted("judge")
        if gate is None:
            return _error(429, "judge queue is full")
        try:
            return {"text": app.state.models["judge"].complete(body["prompt"])}
        finally:
            gate.release()

    @app.post("/v1/kb/search")
    async def kb_search(request: Request):
        body, err = await _body(request, "kb_search_request")
        if err:
            return err
        gate = _admitted("kb")
        if gate is None:
            return _error(429, "kb queue is full")
        try:
            return {"candidates": app.state.kb.query(body["concept"])}
        finally:
            gate.release()

    return app
