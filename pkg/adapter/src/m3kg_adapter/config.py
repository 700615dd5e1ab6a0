"""Adapter configuration: model selection per role is config, not code."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

# The wire schemas are the shared contract artifact with the engine repo;
# in-tree they sit next to the primary package.
DEFAULT_SCHEMAS_DIR = Path(__file__).resolve().parents[3] / "src" / "m3kg" / "protocol_schemas"

AGENT_ROLES = (
    "rewriter",
    "extractor",
    "normalizer",
    "searcher_callback",
    "selector",
    "refiner",
    "inspector",
    "grasp_filter",
)


@dataclass
class AdapterConfig:
    embedder: str = "hash-v1"
    visual_grounder: str = "pseudo-detector-v1"
    audio_grounder: str = "pseudo-tag-v1"
    agent: str = "placeholder-agents-v1"
    answerer: str = "placeholder-lm-v1"
    judge: str = "placeholder-lm-v1"
    kb: str = "local"  # local | wikipedia | wikipedia+wiktionary
    audio_dim: int = 16
    visual_dim: int = 16
    seed: int = 0
    queue_depth: int = 8
    schemas_dir: Path = field(default_factory=lambda: DEFAULT_SCHEMAS_DIR)

    @classmethod
    def from_file(cls, path: str | Path) -> "AdapterConfig":
        doc = json.loads(Path(path).read_text("utf-8"))
        cfg = cls()
        models = doc.get("models", {})
        for role in ("embedder", "visual_grounder", "audio_grounder",
                     "agent", "answerer", "judge"):
            if role in models:
                setattr(cfg, role, models[role])
        cfg.kb = doc.get("kb", cfg.kb)
        embedding = doc.get("embedding", {})
        cfg.audio_dim = int(embedding.get("audio_dim", cfg.audio_dim))
        cfg.visual_dim = int(embedding.get("visual_dim", cfg.visual_dim))
        cfg.seed = int(doc.get("seed", cfg.seed))
        cfg.queue_depth = int(doc.get("queue_depth", cfg.queue_depth))
        if "schemas_dir" in doc:
            cfg.schemas_dir = Path(doc["schemas_dir"])
        return cfg
