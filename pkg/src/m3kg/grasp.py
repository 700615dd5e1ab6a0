"""Grounded pruning of retrieved triplets, then a conservative LLM filter.

Stage one scores each candidate triplet for presence in the query media
(visual: per-frame detection of head and tail mentions, frame-max then
summed; audio: one grounding call on the triplet rendered as a sentence;
both: sum of the two) and drops triplets scoring below the active threshold.
Stage two asks a lightweight LLM which survivors actually help answer the
question, keeping everything on any parse or transport failure — the filter
is an optimization, never a correctness gate.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field

from . import prompts
from .backends import AgentBackend, AgentRole, AudioGrounder, VisualGrounder
from .errors import BackendUnavailableError
from .graph import Graph, Triplet, TripletId

logger = logging.getLogger(__name__)

DEFAULT_FRAME_COUNT = 4


@dataclass
class GraspConfig:
    eta_v: float = 0.0
    eta_a: float = 0.0
    eta_av: float = 0.0
    frame_count: int = DEFAULT_FRAME_COUNT
    grounding_enabled: bool = True
    filter_enabled: bool = True

    def __post_init__(self) -> None:
        if self.frame_count < 1:
            raise ValueError("frame_count must be >= 1")
        for name in ("eta_v", "eta_a", "eta_av"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


@dataclass
class GroundingQuery:
    """The query-side media the grounders check presence against."""

    audio_ref: str | None = None
    visual_ref: str | None = None

    def __post_init__(self) -> None:
        if self.audio_ref is None and self.visual_ref is None:
            raise ValueError("grounding query needs at least one media reference")


@dataclass
class TraceRow:
    triplet: TripletId
    visual_score: float | None = None
    audio_score: float | None = None
    fused_score: float | None = None
    kept_by_grounding: bool = True
    kept_by_filter: bool = True


@dataclass
class PruneTrace:
    rows: list[TraceRow] = field(default_factory=list)
    filter_fallback: bool = False

    def to_records(self, query_id, config: GraspConfig) -> list[dict]:
        snapshot = {
            "eta_v": config.eta_v,
            "eta_a": config.eta_a,
            "eta_av": config.eta_av,
            "frame_count": config.frame_count,
            "grounding_enabled": config.grounding_enabled,
            "filter_enabled": config.filter_enabled,
        }
        return [
            {
                "query": query_id,
                "triplet": row.triplet,
                "visual_score": row.visual_score,
                "audio_score": row.audio_score,
                "fused_score": row.fused_score,
                "kept_by_grounding": row.kept_by_grounding,
                "kept_by_filter": row.kept_by_filter,
                "config": snapshot,
            }
            for row in self.rows
        ]


def serialize_triplet(t: Triplet | TripletId, graph: Graph) -> str:
    """Render a triplet as the sentence ``<head> <relation> <tail>``.

    Original surface forms and casing, single-space joined, no terminal
    punctuation.
    """
    if isinstance(t, int):
        t = graph.triplet(t)
    head = graph.entity(t.head).surface
    tail = graph.entity(t.tail).surface
    return f"{head} {t.relation} {tail}"


def visual_entity_score(
    entity_surface: str,
    visual_ref: str,
    grounder: VisualGrounder,
    frame_count: int = DEFAULT_FRAME_COUNT,
) -> float:
    """Frame-max detection confidence for the entity's original mention.

    Frames with no detection contribute 0, so an empty confidence list
    scores 0.
    """
    confidences = grounder.ground_visual(entity_surface, visual_ref, frame_count)
    return max((float(c) for c in confidences), default=0.0)


class ScoreContext:
    """Per-query memoization of grounding calls.

    Entity scores are computed once per distinct surface and audio scores
    once per triplet, so backend traffic is bounded by the distinct entities
    and triplets of one query. Caches never outlive the query.
    """

    def __init__(
        self,
        graph: Graph,
        query: GroundingQuery,
        visual_grounder: VisualGrounder,
        audio_grounder: AudioGrounder,
        frame_count: int = DEFAULT_FRAME_COUNT,
    ):
        self.graph = graph
        self.query = query
        self.visual_grounder = visual_grounder
        self.audio_grounder = audio_grounder
        self.frame_count = frame_count
        self._entity: dict[str, float] = {}
        self._audio: dict[TripletId, float] = {}

    def entity_score(self, surface: str) -> float:
        if surface not in self._entity:
            self._entity[surface] = visual_entity_score(
                surface, self.query.visual_ref, self.visual_grounder, self.frame_count
            )
        return self._entity[surface]

    def visual_triplet_score(self, tid: TripletId) -> float:
        t = self.graph.triplet(tid)
        head = self.graph.entity(t.head).surface
        tail = self.graph.entity(t.tail).surface
        return self.entity_score(head) + self.entity_score(tail)

    def audio_triplet_score(self, tid: TripletId) -> float:
        if tid not in self._audio:
            sentence = serialize_triplet(tid, self.graph)
            self._audio[tid] = float(
                self.audio_grounder.ground_audio(sentence, self.query.audio_ref)
            )
        return self._audio[tid]

    def fused_triplet_score(self, tid: TripletId) -> float:
        return self.visual_triplet_score(tid) + self.audio_triplet_score(tid)


def visual_triplet_score(
    t: Triplet | TripletId, visual_ref: str, grounder: VisualGrounder,
    graph: Graph, frame_count: int = DEFAULT_FRAME_COUNT,
) -> float:
    """Sum of head and tail entity presence scores (self-loops count twice)."""
    if isinstance(t, int):
        t = graph.triplet(t)
    ctx = ScoreContext(
        graph, GroundingQuery(visual_ref=visual_ref), grounder, _NO_AUDIO, frame_count
    )
    return ctx.visual_triplet_score(t.id)


def audio_triplet_score(
    t: Triplet | TripletId, audio_ref: str, grounder: AudioGrounder, graph: Graph
) -> float:
    """One grounding call on the triplet sentence; score used as-is."""
    if isinstance(t, int):
        t = graph.triplet(t)
    return float(grounder.ground_audio(serialize_triplet(t, graph), audio_ref))


class _NoAudio(AudioGrounder):
    def ground_audio(self, sentence: str, audio_ref: str) -> float:
        raise RuntimeError("audio grounder not available in this context")


_NO_AUDIO = _NoAudio()


def ground_prune(
    g_init: list[TripletId],
    query: GroundingQuery,
    config: GraspConfig,
    visual_grounder: VisualGrounder,
    audio_grounder: AudioGrounder,
    graph: Graph,
) -> tuple[list[TripletId], PruneTrace]:
    """Score every candidate and keep those at or above the active threshold.

    The active score and threshold follow the query's modality composition:
    visual-only (eta_v), audio-only (eta_a), or fused sum (eta_av). Input
    order is preserved.
    """
    ctx = ScoreContext(graph, query, visual_grounder, audio_grounder, config.frame_count)
    has_visual = query.visual_ref is not None
    has_audio = query.audio_ref is not None
    trace = PruneTrace()
    kept: list[TripletId] = []
    for tid in g_init:
        row = TraceRow(triplet=tid)
        if has_visual:
            row.visual_score = ctx.visual_triplet_score(tid)
        if has_audio:
            row.audio_score = ctx.audio_triplet_score(tid)
        if has_visual and has_audio:
            row.fused_score = row.visual_score + row.audio_score
            score, eta = row.fused_score, config.eta_av
        elif has_visual:
            score, eta = row.visual_score, config.eta_v
        else:
            score, eta = row.audio_score, config.eta_a
        row.kept_by_grounding = score >= eta
        row.kept_by_filter = row.kept_by_grounding
        trace.rows.append(row)
        if row.kept_by_grounding:
            kept.append(tid)
    return kept, trace


_INDEX_LIST_RE = re.compile(r"^\[?\s*(?:-?\d+(?:\s*,\s*-?\d+)*)?\s*\]?$")


def parse_kept_indices(text: str, n: int) -> set[int] | None:
    """Parse a kept-index reply; None on any malformed or out-of-range token."""
    stripped = text.strip()
    if not _INDEX_LIST_RE.match(stripped):
        return None
    indices = {int(x) for x in re.findall(r"-?\d+", stripped)}
    if any(i < 0 or i >= n for i in indices):
        return None
    return indices


def llm_filter(
    question: str,
    g_grd: list[TripletId],
    agent: AgentBackend,
    graph: Graph,
) -> tuple[list[TripletId], bool]:
    """Keep-or-drop filter over the grounded survivors.

    Returns (kept ids in original order, fallback flag). Unparseable output,
    out-of-range indices, or an unreachable backend all fall back to keeping
    everything.
    """
    if not g_grd:
        return [], False
    sentences = [serialize_triplet(tid, graph) for tid in g_grd]
    prompt = prompts.render(
        "grasp_filter",
        QUERY=question,
        TRIPLETS=prompts.enumerate_sentences(sentences),
    )
    try:
        reply = agent.complete(AgentRole.GRASP_FILTER, prompt)
    except BackendUnavailableError as exc:
        logger.warning("filter backend unavailable (%s); keeping all triplets", exc)
        return list(g_grd), True
    kept_set = parse_kept_indices(reply, len(g_grd))
    if kept_set is None:
        logger.warning("unparseable filter reply %r; keeping all triplets", reply[:80])
        return list(g_grd), True
    return [tid for i, tid in enumerate(g_grd) if i in kept_set], False


def grasp(
    question: str,
    g_init: list[TripletId],
    query: GroundingQuery,
    config: GraspConfig,
    visual_grounder: VisualGrounder,
    audio_grounder: AudioGrounder,
    agent: AgentBackend,
    graph: Graph,
) -> tuple[list[TripletId], PruneTrace]:
    """Grounded pruning then the LLM filter; either stage can be disabled."""
    if config.grounding_enabled:
        g_grd, trace = ground_prune(
            g_init, query, config, visual_grounder, audio_grounder, graph
        )
    else:
        g_grd = list(g_init)
        trace = PruneTrace(rows=[TraceRow(triplet=tid) for tid in g_init])
    if config.filter_enabled:
        kept, fallback = llm_filter(question, g_grd, agent, graph)
        trace.filter_fallback = fallback
        kept_set = set(kept)
        for row in trace.rows:
            row.kept_by_filter = row.kept_by_grounding and row.triplet in kept_set
    else:
        kept = g_grd
    return kept, trace
