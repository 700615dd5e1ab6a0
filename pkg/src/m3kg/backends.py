"""Model-backend seam: one JSON-over-HTTP protocol plus in-process stubs.

Every model dependency (embedders, grounders, LLM agents, the answering
model, the judge) sits behind a small interface defined here. The HTTP
clients speak the wire protocol; the stub implementations are deterministic
pure functions of their inputs and a fixture seed, which keeps the whole
test suite hermetic and network-free.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import re
import time
import uuid
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Mapping, Sequence

import requests

from .errors import (
    BackendProtocolError,
    BackendUnavailableError,
    KbTimeoutError,
)

logger = logging.getLogger(__name__)

REQUEST_ID_HEADER = "x-m3kg-request-id"
TIMEOUT_HEADER = "x-m3kg-timeout-ms"


class AgentRole(str, Enum):
    REWRITER = "rewriter"
    EXTRACTOR = "extractor"
    NORMALIZER = "normalizer"
    SEARCHER_CALLBACK = "searcher_callback"
    SELECTOR = "selector"
    REFINER = "refiner"
    INSPECTOR = "inspector"
    GRASP_FILTER = "grasp_filter"


# ---------------------------------------------------------------------------
# Interfaces
# ---------------------------------------------------------------------------

class Embedder:
    def embed(self, modality: str, content_ref: str) -> list[float]:
        raise NotImplementedError


class VisualGrounder:
    def ground_visual(self, entity: str, visual_ref: str, frame_count: int) -> list[float]:
        """Per-frame detection confidences for an entity phrase."""
        raise NotImplementedError


class AudioGrounder:
    def ground_audio(self, sentence: str, audio_ref: str) -> float:
        raise NotImplementedError


class AgentBackend:
    def complete(self, role: AgentRole, prompt: str) -> str:
        raise NotImplementedError


class AnswerBackend:
    def answer(self, prompt: str, audio_ref: str | None, visual_ref: str | None) -> str:
        raise NotImplementedError


class JudgeBackend:
    def judge(self, prompt: str) -> str:
        raise NotImplementedError


class KnowledgeSource:
    """Candidate-description lookup for a normalized concept."""

    def query(self, concept: str) -> list[str]:
        raise NotImplementedError


# ---------------------------------------------------------------------------
# Deterministic stubs
# ---------------------------------------------------------------------------

def _unit_float(digest: bytes) -> float:
    """Map 8 hash bytes to a float in [-1, 1], platform-independent."""
    value = int.from_bytes(digest[:8], "big")
    return value / float(2**64 - 1) * 2.0 - 1.0


class StubEmbedder(Embedder):
    """Seeded hash of content_ref expanded to the configured dimension."""

    def __init__(self, dims: Mapping[str, int], seed: int = 0):
        self.dims = {str(k): int(v) for k, v in dims.items()}
        self.seed = seed

    def embed(self, modality: str, content_ref: str) -> list[float]:
        dim = self.dims[str(modality)]
        out = []
        for i in range(dim):
            h = hashlib.sha256(f"{self.seed}|{modality}|{content_ref}|{i}".encode()).digest()
            out.append(_unit_float(h))
        return out


def _keyword_hits(table: Mapping[str, object], text: str) -> list[object]:
    """Values of all table keywords occurring in text (case-insensitive substring)."""
    lowered = text.lower()
    return [v for k, v in table.items() if k.lower() in lowered]


class StubVisualGrounder(VisualGrounder):
    """Rule-table grounder: keyword -> confidence (scalar or per-frame list).

    A scalar is broadcast to every frame; multiple matching keywords take the
    per-frame maximum; no match yields all-zero confidences.
    """

    def __init__(self, table: Mapping[str, float | Sequence[float]] | None = None):
        self.table = dict(table or {})

    def ground_visual(self, entity: str, visual_ref: str, frame_count: int) -> list[float]:
        frames = [0.0] * frame_count
        for value in _keyword_hits(self.table, entity):
            if isinstance(value, (int, float)):
                per_frame = [float(value)] * frame_count
            else:
                per_frame = [float(x) for x in value][:frame_count]
                per_frame += [0.0] * (frame_count - len(per_frame))
            frames = [max(a, b) for a, b in zip(frames, per_frame)]
        return frames


class StubAudioGrounder(AudioGrounder):
    """Rule-table grounder: max value over keywords contained in the sentence."""

    def __init__(self, table: Mapping[str, float] | None = None):
        self.table = dict(table or {})

    def ground_audio(self, sentence: str, audio_ref: str) -> float:
        hits = [float(v) for v in _keyword_hits(self.table, sentence)]
        return max(hits) if hits else 0.0


# --- field extraction from rendered prompts (what a scripted agent "reads") --

def prompt_field(prompt: str, label: str) -> str:
    """Value of a single-line ``label: value`` field in a rendered prompt."""
    match = re.search(rf"^{re.escape(label)}: ?(.*)$", prompt, flags=re.MULTILINE)
    if match is None:
        raise ValueError(f"prompt has no field {label!r}")
    return match.group(1)


def prompt_block(prompt: str, header: str, stop: str) -> str:
    """Multi-line block between a ``header`` line and a ``stop`` line."""
    pattern = rf"^{re.escape(header)}\n(.*?)\n{re.escape(stop)}"
    match = re.search(pattern, prompt, flags=re.MULTILINE | re.DOTALL)
    if match is None:
        raise ValueError(f"prompt has no block {header!r}")
    return match.group(1)


def prompt_enumerated(prompt: str) -> list[str]:
    """1-based ``N. text`` items of a rendered candidate enumeration."""
    return [m.group(1) for m in re.finditer(r"^(?:CANDIDATES: )?\d+\. (.*)$", prompt, re.MULTILINE)]


_ARTICLES = ("a ", "an ", "the ")


def default_rewriter(prompt: str) -> str:
    return prompt_field(prompt, "ORIGINAL CAPTION")


def default_extractor(prompt: str) -> str:
    """Word-chain rule: up to three ``(w_i, precedes, w_i+1)`` lines.

    Adjacent-word triplets share entities, so stub-built graphs get genuine
    multi-hop structure within and across samples.
    """
    words = prompt_field(prompt, "Caption").split()
    lines = [
        f"({words[i]}, precedes, {words[i + 1]})"
        for i in range(min(len(words) - 1, 3))
    ]
    return "\n".join(lines)


def default_normalizer(prompt: str) -> str:
    concept = prompt_field(prompt, "CONCEPT").lower()
    for article in _ARTICLES:
        if concept.startswith(article):
            concept = concept[len(article):]
            break
    return concept.strip()


def default_searcher_callback(prompt: str) -> str:
    concept = prompt_field(prompt, "Concept")
    return f"{concept} is a concept that recurs in everyday audiovisual scenes."


def default_selector(prompt: str) -> str:
    return prompt_enumerated(prompt)[0]


def default_refiner(prompt: str) -> str:
    return prompt_block(
        prompt, "Selected description (about the searchable concept):", "Output:"
    )


def default_inspector(prompt: str) -> str:
    return "10"


def default_grasp_filter(prompt: str) -> str:
    # the first enumerated sentence sits on the "Triplets: " line itself
    count = len(re.findall(r"^(?:Triplets: )?\d+\. ", prompt, flags=re.MULTILINE))
    return json.dumps(list(range(count)))


_DEFAULT_BEHAVIORS: dict[AgentRole, Callable[[str], str]] = {
    AgentRole.REWRITER: default_rewriter,
    AgentRole.EXTRACTOR: default_extractor,
    AgentRole.NORMALIZER: default_normalizer,
    AgentRole.SEARCHER_CALLBACK: default_searcher_callback,
    AgentRole.SELECTOR: default_selector,
    AgentRole.REFINER: default_refiner,
    AgentRole.INSPECTOR: default_inspector,
    AgentRole.GRASP_FILTER: default_grasp_filter,
}


class StubAgentBackend(AgentBackend):
    """Scripted per-role agent behaviors; defaults are deterministic rules."""

    def __init__(self, overrides: Mapping[AgentRole, Callable[[str], str]] | None = None):
        self.behaviors = dict(_DEFAULT_BEHAVIORS)
        if overrides:
            self.behaviors.update(overrides)
        self.calls: list[tuple[AgentRole, str]] = []

    def complete(self, role: AgentRole, prompt: str) -> str:
        self.calls.append((role, prompt))
        return self.behaviors[role](prompt)

    def call_count(self, role: AgentRole) -> int:
        return sum(1 for r, _ in self.calls if r is role)


class ScriptedAgent:
    """Callable returning a fixed sequence of outputs, then repeating the last."""

    def __init__(self, outputs: Sequence[str]):
        if not outputs:
            raise ValueError("need at least one scripted output")
        self.outputs = list(outputs)
        self.calls = 0

    def __call__(self, prompt: str) -> str:
        value = self.outputs[min(self.calls, len(self.outputs) - 1)]
        self.calls += 1
        return value


class StubAnswerer(AnswerBackend):
    """Deterministic digest answer derived from the prompt and media refs."""

    def answer(self, prompt: str, audio_ref: str | None, visual_ref: str | None) -> str:
        hints = len(re.findall(r"\[\d+\] head=", prompt))
        sig = hashlib.sha256(
            f"{prompt}|{audio_ref}|{visual_ref}".encode()
        ).hexdigest()[:12]
        return f"[stub-answer] hints={hints} sig={sig}"


class EchoAnswerer(AnswerBackend):
    def answer(self, prompt: str, audio_ref: str | None, visual_ref: str | None) -> str:
        return prompt


class StubJudge(JudgeBackend):
    """Returns scripted texts in order, repeating the last one."""

    def __init__(self, outputs: Sequence[str] = ("4",)):
        self.script = ScriptedAgent(outputs)

    def judge(self, prompt: str) -> str:
        return self.script(prompt)


class EmptyKnowledgeSource(KnowledgeSource):
    def query(self, concept: str) -> list[str]:
        return []


class FileKnowledgeSource(KnowledgeSource):
    """Fixture-backed source: a JSON object mapping concept -> [descriptions]."""

    def __init__(self, path: str | Path):
        self.entries: dict[str, list[str]] = json.loads(Path(path).read_text("utf-8"))

    def query(self, concept: str) -> list[str]:
        return list(self.entries.get(concept, []))


class MappingKnowledgeSource(KnowledgeSource):
    def __init__(self, entries: Mapping[str, Sequence[str]]):
        self.entries = {k: list(v) for k, v in entries.items()}

    def query(self, concept: str) -> list[str]:
        return list(self.entries.get(concept, []))


# ---------------------------------------------------------------------------
# HTTP clients
# ---------------------------------------------------------------------------

@dataclass
class RetryPolicy:
    max_retries: int = 2
    backoff_s: float = 0.25
    timeout_ms: int = 30_000


class HttpTransport:
    """POSTs JSON bodies with retry/backoff; raises after retries exhaust.

    The request id and timeout budget travel as headers so the endpoint body
    schemas stay exactly as specified.
    """

    def __init__(self, base_url: str, policy: RetryPolicy | None = None,
                 token: str | None = None, session: requests.Session | None = None):
        self.base_url = base_url.rstrip("/")
        self.policy = policy or RetryPolicy()
        self.token = token
        self.session = session or requests.Session()

    def post(self, path: str, body: dict) -> dict:
        url = f"{self.base_url}{path}"
        request_id = uuid.uuid4().hex
        headers = {
            REQUEST_ID_HEADER: request_id,
            TIMEOUT_HEADER: str(self.policy.timeout_ms),
        }
        if self.token:
            headers["authorization"] = f"Bearer {self.token}"
        attempts = self.policy.max_retries + 1
        last_error: Exception | None = None
        for attempt in range(attempts):
            if attempt:
                time.sleep(self.policy.backoff_s * (2 ** (attempt - 1)))
            try:
                resp = self.session.post(
                    url, json=body, headers=headers,
                    timeout=self.policy.timeout_ms / 1000.0,
                )
            except requests.RequestException as exc:
                last_error = exc
                logger.warning("backend %s attempt %d failed: %s", url, attempt + 1, exc)
                continue
            if resp.status_code >= 500:
                last_error = BackendUnavailableError(f"{url} returned {resp.status_code}")
                continue
            if resp.status_code >= 400:
                raise BackendProtocolError(f"{url} rejected request: {resp.text[:200]}")
            echoed = resp.headers.get(REQUEST_ID_HEADER)
            if echoed is not None and echoed != request_id:
                raise BackendProtocolError(f"{url} echoed wrong request id")
            try:
                return resp.json()
            except ValueError:
                raise BackendProtocolError(f"{url} returned non-JSON body") from None
        raise BackendUnavailableError(f"{url} unavailable after {attempts} attempts: {last_error}")


def _finite_floats(values: object, context: str) -> list[float]:
    if not isinstance(values, list):
        raise BackendProtocolError(f"{context}: expected a list of numbers")
    out = []
    for x in values:
        if not isinstance(x, (int, float)) or isinstance(x, bool) or not math.isfinite(x):
            raise BackendProtocolError(f"{context}: non-finite or non-numeric value {x!r}")
        out.append(float(x))
    return out


class HttpEmbedder(Embedder):
    def __init__(self, transport: HttpTransport):
        self.transport = transport

    def embed(self, modality: str, content_ref: str) -> list[float]:
        body = {"modality": str(modality), "content_ref": content_ref}
        resp = self.transport.post("/v1/embed", body)
        return _finite_floats(resp.get("embedding"), "/v1/embed embedding")


class HttpVisualGrounder(VisualGrounder):
    def __init__(self, transport: HttpTransport):
        self.transport = transport

    def ground_visual(self, entity: str, visual_ref: str, frame_count: int) -> list[float]:
        body = {"entity": entity, "visual_ref": visual_ref, "frame_count": frame_count}
        resp = self.transport.post("/v1/ground/visual", body)
        return _finite_floats(resp.get("confidences"), "/v1/ground/visual confidences")


class HttpAudioGrounder(AudioGrounder):
    def __init__(self, transport: HttpTransport):
        self.transport = transport

    def ground_audio(self, sentence: str, audio_ref: str) -> float:
        body = {"sentence": sentence, "audio_ref": audio_ref}
        resp = self.transport.post("/v1/ground/audio", body)
        score = resp.get("score")
        if not isinstance(score, (int, float)) or isinstance(score, bool) or not math.isfinite(score):
            raise BackendProtocolError("/v1/ground/audio: score must be a finite number")
        return float(score)


class HttpAgentBackend(AgentBackend):
    def __init__(self, transport: HttpTransport):
        self.transport = transport

    def complete(self, role: AgentRole, prompt: str) -> str:
        resp = self.transport.post(f"/v1/agent/{role.value}", {"prompt": prompt})
        text = resp.get("text")
        if not isinstance(text, str):
            raise BackendProtocolError(f"/v1/agent/{role.value}: text must be a string")
        return text


class HttpAnswerBackend(AnswerBackend):
    def __init__(self, transport: HttpTransport):
        self.transport = transport

    def answer(self, prompt: str, audio_ref: str | None, visual_ref: str | None) -> str:
        body = {"prompt": prompt, "audio_ref": audio_ref, "visual_ref": visual_ref}
        resp = self.transport.post("/v1/answer", body)
        text = resp.get("text")
        if not isinstance(text, str):
            raise BackendProtocolError("/v1/answer: text must be a string")
        return text


class HttpJudgeBackend(JudgeBackend):
    def __init__(self, transport: HttpTransport):
        self.transport = transport

    def judge(self, prompt: str) -> str:
        resp = self.transport.post("/v1/judge", {"prompt": prompt})
        text = resp.get("text")
        if not isinstance(text, str):
            raise BackendProtocolError("/v1/judge: text must be a string")
        return text


class HttpKnowledgeSource(KnowledgeSource):
    def __init__(self, transport: HttpTransport):
        self.transport = transport

    def query(self, concept: str) -> list[str]:
        try:
            resp = self.transport.post("/v1/kb/search", {"concept": concept})
        except BackendUnavailableError as exc:
            raise KbTimeoutError(str(exc)) from exc
        candidates = resp.get("candidates")
        if not isinstance(candidates, list) or not all(isinstance(c, str) for c in candidates):
            raise BackendProtocolError("/v1/kb/search: candidates must be a list of strings")
        return list(candidates)


# ---------------------------------------------------------------------------
# Backend bundle
# ---------------------------------------------------------------------------

@dataclass
class BackendSet:
    """Everything the pipeline may call, resolved from config."""

    embedder: Embedder
    agent: AgentBackend
    visual_grounder: VisualGrounder
    audio_grounder: AudioGrounder
    answerer: AnswerBackend
    judge: JudgeBackend | None = None
    kb: KnowledgeSource = field(default_factory=EmptyKnowledgeSource)


def stub_backend_set(
    dims: Mapping[str, int],
    seed: int = 0,
    visual_table: Mapping[str, float | Sequence[float]] | None = None,
    audio_table: Mapping[str, float] | None = None,
    kb: KnowledgeSource | None = None,
    agent_overrides: Mapping[AgentRole, Callable[[str], str]] | None = None,
) -> BackendSet:
    return BackendSet(
        embedder=StubEmbedder(dims, seed=seed),
        agent=StubAgentBackend(agent_overrides),
        visual_grounder=StubVisualGrounder(visual_table),
        audio_grounder=StubAudioGrounder(audio_table),
        answerer=StubAnswerer(),
        judge=StubJudge(),
        kb=kb or EmptyKnowledgeSource(),
    )
