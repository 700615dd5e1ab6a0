"""Engine configuration: file schema, benchmark profiles, backend resolution.

Precedence is defaults < config file < named profile < explicit flags; the
``M3KG_CONFIG`` environment variable names the default config path. Every
model dependency resolves to either an in-process stub or an HTTP endpoint.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

from .backends import (
    BackendSet,
    EmptyKnowledgeSource,
    FileKnowledgeSource,
    HttpAgentBackend,
    HttpAnswerBackend,
    HttpAudioGrounder,
    HttpEmbedder,
    HttpJudgeBackend,
    HttpKnowledgeSource,
    HttpTransport,
    HttpVisualGrounder,
    KnowledgeSource,
    RetryPolicy,
    StubAgentBackend,
    StubAnswerer,
    StubAudioGrounder,
    StubEmbedder,
    StubJudge,
    StubVisualGrounder,
)
from .errors import ConfigError
from .generation import DEFAULT_CHAR_BUDGET
from .graph import Modality
from .grasp import GraspConfig
from .index import RetrievalConfig

CONFIG_ENV_VAR = "M3KG_CONFIG"

STUB = "stub"

# Per-benchmark default profiles; every value remains flag-overridable.
PROFILES: dict[str, dict] = {
    "audiocaps": {"tau": 0.3, "eta_a": 0.5, "k": 5},
    "vcgpt": {"tau": 0.15, "eta_v": 1.5, "k": 5},
    "valor": {"tau": 4.5, "eta_av": 1.2, "k": 5},
}


@dataclass
class BackendsConfig:
    embedder: str = STUB
    agent: str = STUB
    visual_grounder: str = STUB
    audio_grounder: str = STUB
    answerer: str = STUB
    judge: str = STUB
    kb: str = "empty"  # "empty", "file:<path>", or an http(s) URL
    token: str | None = None


@dataclass
class StubTables:
    """Fixture rule-tables consumed by the stub backends."""

    visual: dict[str, object] = field(default_factory=dict)
    audio: dict[str, float] = field(default_factory=dict)
    judge_script: list[str] = field(default_factory=lambda: ["4"])


@dataclass
class EngineConfig:
    backends: BackendsConfig = field(default_factory=BackendsConfig)
    dims: dict[Modality, int] = field(
        default_factory=lambda: {Modality.AUDIO: 16, Modality.VISUAL: 16}
    )
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    grasp: GraspConfig = field(default_factory=GraspConfig)
    char_budget: int = DEFAULT_CHAR_BUDGET
    jobs: int = 1
    seed: int = 0
    retry: RetryPolicy = field(default_factory=RetryPolicy)
    stub: StubTables = field(default_factory=StubTables)

    def with_profile(self, name: str) -> "EngineConfig":
        try:
            overlay = PROFILES[name]
        except KeyError:
            raise ConfigError(
                f"unknown profile {name!r}; choose from {sorted(PROFILES)}"
            ) from None
        retrieval = replace(
            self.retrieval,
            k=overlay.get("k", self.retrieval.k),
            tau=overlay.get("tau", self.retrieval.tau),
        )
        grasp_cfg = replace(
            self.grasp,
            eta_v=overlay.get("eta_v", self.grasp.eta_v),
            eta_a=overlay.get("eta_a", self.grasp.eta_a),
            eta_av=overlay.get("eta_av", self.grasp.eta_av),
        )
        return replace(self, retrieval=retrieval, grasp=grasp_cfg)


def _parse_number(value, name: str) -> float:
    if isinstance(value, str):
        if value.lower() in ("inf", "infinity"):
            return math.inf
        raise ConfigError(f"{name} must be a number or 'inf', got {value!r}")
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{name} must be a number, got {value!r}")
    return float(value)


def load_config(path: str | Path | None = None) -> EngineConfig:
    """Load a config file; a missing explicit path is an error, a missing
    env-var path falls back to defaults."""
    if path is None:
        env = os.environ.get(CONFIG_ENV_VAR)
        if env is None:
            return EngineConfig()
        path = env
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        doc = json.loads(p.read_text("utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid config JSON: {exc}") from None
    return config_from_dict(doc)


def config_from_dict(doc: dict) -> EngineConfig:
    cfg = EngineConfig()
    backends = doc.get("backends", {})
    cfg.backends = BackendsConfig(
        embedder=backends.get("embedder", STUB),
        agent=backends.get("agent", STUB),
        visual_grounder=backends.get("visual_grounder", STUB),
        audio_grounder=backends.get("audio_grounder", STUB),
        answerer=backends.get("answerer", STUB),
        judge=backends.get("judge", STUB),
        kb=backends.get("kb", "empty"),
        token=backends.get("token"),
    )
    dims = doc.get("embedding", {})
    cfg.dims = {
        Modality.AUDIO: int(dims.get("audio_dim", 16)),
        Modality.VISUAL: int(dims.get("visual_dim", 16)),
    }
    retrieval = doc.get("retrieval", {})
    cfg.retrieval = RetrievalConfig(
        k=int(retrieval.get("k", 5)),
        tau=_parse_number(retrieval.get("tau", math.inf), "retrieval.tau"),
        hops=int(retrieval.get("hops", 1)),
    )
    grasp_doc = doc.get("grasp", {})
    stages = grasp_doc.get("stages", {})
    cfg.grasp = GraspConfig(
        eta_v=_parse_number(grasp_doc.get("eta_v", 0.0), "grasp.eta_v"),
        eta_a=_parse_number(grasp_doc.get("eta_a", 0.0), "grasp.eta_a"),
        eta_av=_parse_number(grasp_doc.get("eta_av", 0.0), "grasp.eta_av"),
        frame_count=int(grasp_doc.get("frame_count", 4)),
        grounding_enabled=bool(stages.get("grounding", True)),
        filter_enabled=bool(stages.get("filter", True)),
    )
    generation = doc.get("generation", {})
    cfg.char_budget = int(generation.get("char_budget", DEFAULT_CHAR_BUDGET))
    cfg.jobs = int(doc.get("jobs", 1))
    cfg.seed = int(doc.get("seed", 0))
    retry = doc.get("retry", {})
    cfg.retry = RetryPolicy(
        max_retries=int(retry.get("max_retries", 2)),
        backoff_s=float(retry.get("backoff_s", 0.25)),
        timeout_ms=int(retry.get("timeout_ms", 30_000)),
    )
    stub = doc.get("stub", {})
    cfg.stub = StubTables(
        visual=dict(stub.get("visual_table", {})),
        audio=dict(stub.get("audio_table", {})),
        judge_script=list(stub.get("judge_script", ["4"])),
    )
    return cfg


def _transport(endpoint: str, cfg: EngineConfig) -> HttpTransport:
    return HttpTransport(endpoint, policy=cfg.retry, token=cfg.backends.token)


def _resolve_kb(cfg: EngineConfig) -> KnowledgeSource:
    kb = cfg.backends.kb
    if kb == "empty" or kb == STUB:
        return EmptyKnowledgeSource()
    if kb.startswith("file:"):
        return FileKnowledgeSource(kb[len("file:"):])
    if kb.startswith("http://") or kb.startswith("https://"):
        return HttpKnowledgeSource(_transport(kb, cfg))
    raise ConfigError(f"unrecognized kb source {kb!r}")


def resolve_backends(cfg: EngineConfig) -> BackendSet:
    """Instantiate every backend from its config entry (stub or URL)."""
    b = cfg.backends
    dims = {m.value: d for m, d in cfg.dims.items()}
    embedder = (
        StubEmbedder(dims, seed=cfg.seed)
        if b.embedder == STUB
        else HttpEmbedder(_transport(b.embedder, cfg))
    )
    agent = (
        StubAgentBackend() if b.agent == STUB else HttpAgentBackend(_transport(b.agent, cfg))
    )
    visual = (
        StubVisualGrounder(cfg.stub.visual)
        if b.visual_grounder == STUB
        else HttpVisualGrounder(_transport(b.visual_grounder, cfg))
    )
    audio = (
        StubAudioGrounder(cfg.stub.audio)
        if b.audio_grounder == STUB
        else HttpAudioGrounder(_transport(b.audio_grounder, cfg))
    )
    answerer = (
        StubAnswerer() if b.answerer == STUB else HttpAnswerBackend(_transport(b.answerer, cfg))
    )
    judge = (
        StubJudge(cfg.stub.judge_script)
        if b.judge == STUB
        else HttpJudgeBackend(_transport(b.judge, cfg))
    )
    return BackendSet(
        embedder=embedder,
        agent=agent,
        visual_grounder=visual,
        audio_grounder=audio,
        answerer=answerer,
        judge=judge,
        kb=_resolve_kb(cfg),
    )
