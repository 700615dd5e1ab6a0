from __future__ import annotations

import json
from pathlib import Path

import pytest
from fastapi.testclient import TestClient

from m3kg_adapter.app import create_app
from m3kg_adapter.config import AdapterConfig

REPO_ROOT = Path(__file__).resolve().parents[2]
SCHEMAS_DIR = REPO_ROOT / "src" / "m3kg" / "protocol_schemas"
FIXTURE_PATH = REPO_ROOT / "tests" / "fixtures" / "protocol_requests.jsonl"


def load_fixture_records() -> list[dict]:
    return [
        json.loads(line)
        for line in FIXTURE_PATH.read_text("utf-8").splitlines()
        if line.strip()
    ]


def load_schema(name: str) -> dict:
    return json.loads((SCHEMAS_DIR / f"{name}.json").read_text("utf-8"))


@pytest.fixture
def config() -> AdapterConfig:
    return AdapterConfig(audio_dim=8, visual_dim=8, schemas_dir=SCHEMAS_DIR)


@pytest.fixture
def client(config):
    with TestClient(create_app(config)) as test_client:
        yield test_client
