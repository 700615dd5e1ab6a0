"""Agent-driven graph construction pipeline.

Per sample: enrich the caption with crawl metadata, extract (head, relation,
tail) triplets, normalize entity mentions to searchable concepts, look up and
select candidate descriptions, refine the chosen description to the original
phrasing, and gate model-generated descriptions through an inspector loop.
Committed samples link every triplet to the sample's media, so the finished
graph always satisfies the coverage property.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Mapping

from . import prompts
from .backends import AgentBackend, BackendSet, AgentRole, KnowledgeSource
from .corpus import CorpusSample
from .errors import BackendUnavailableError, KbTimeoutError
from .graph import EntityKey, Graph, GraphBuilder, Modality, iter_entity_keys

logger = logging.getLogger(__name__)

# Inspector acceptance rule: accept at score >= 7, at most 3 producer attempts.
ACCEPT_THRESHOLD = 7
MAX_PRODUCER_ATTEMPTS = 3

# Candidate descriptions offered to the selector are capped to bound prompt size.
MAX_CANDIDATES = 5

NORMALIZED_MAX_LEN = 128


@dataclass
class RawTriplet:
    """A parsed (head, relation, tail) line before entity resolution."""

    head_surface: str
    relation: str
    tail_surface: str


class CandidateOrigin(str, Enum):
    KNOWLEDGE_BASE = "knowledge_base"
    LLM_CALLBACK = "llm_callback"


@dataclass
class CandidateDescriptions:
    concept: str
    candidates: list[str]
    origin: CandidateOrigin


@dataclass
class InspectionOutcome:
    """Result of the self-reflection loop around one description producer."""

    accepted: bool
    text: str | None
    attempts: int
    scores: list[int | None]


@dataclass
class BuildReport:
    """Deterministic audit trail of one construction run."""

    parse_drops: list[dict] = field(default_factory=list)
    zero_triplet_samples: list[int] = field(default_factory=list)
    skipped_samples: list[dict] = field(default_factory=list)
    rewriter_fallbacks: list[int] = field(default_factory=list)
    discarded_descriptions: list[dict] = field(default_factory=list)
    description_conflicts: list[dict] = field(default_factory=list)

    def to_records(self) -> list[dict]:
        records: list[dict] = []
        for drop in self.parse_drops:
            records.append({"event": "parse_drop", **drop})
        for sample in self.zero_triplet_samples:
            records.append({"event": "zero_triplets", "sample": sample})
        for skip in self.skipped_samples:
            records.append({"event": "sample_skipped", **skip})
        for sample in self.rewriter_fallbacks:
            records.append({"event": "rewriter_fallback", "sample": sample})
        for disc in self.discarded_descriptions:
            records.append({"event": "description_discarded", **disc})
        for conflict in self.description_conflicts:
            records.append({"event": "description_conflict", **conflict})
        return records


def rewrite_caption(sample: CorpusSample, agent: AgentBackend,
                    report: BuildReport | None = None) -> str:
    """Context-enrich a caption from title/description metadata.

    With no metadata there is nothing to inject, so the agent is not called
    and the caption passes through unchanged. An empty agent response falls
    back to the original caption.
    """
    if sample.title is None and sample.metadata_description is None:
        return sample.caption
    prompt = prompts.render(
        "rewriter",
        TITLE=sample.title or "",
        DESCRIPTION=sample.metadata_description or "",
        ORIGINAL_CAPTION=sample.caption,
    )
    out = agent.complete(AgentRole.REWRITER, prompt).strip()
    if not out:
        logger.info("rewriter returned empty output for sample %d; keeping caption", sample.id)
        if report is not None:
            report.rewriter_fallbacks.append(sample.id)
        return sample.caption
    return out


def parse_triplet_line(line: str) -> RawTriplet | None:
    """Parse one ``(h, r, t)`` line; None if malformed.

    Fields split on the two top-level commas, so commas inside nested
    parentheses do not count as separators.
    """
    line = line.strip()
    if not (line.startswith("(") and line.endswith(")")):
        return None
    inner = line[1:-1]
    depth = 0
    cuts: list[int] = []
    for i, ch in enumerate(inner):
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
            if depth < 0:
                return None
        elif ch == "," and depth == 0:
            cuts.append(i)
    if depth != 0 or len(cuts) != 2:
        return None
    head = inner[: cuts[0]].strip()
    relation = inner[cuts[0] + 1 : cuts[1]].strip()
    tail = inner[cuts[1] + 1 :].strip()
    if not head or not relation or not tail:
        return None
    return RawTriplet(head_surface=head, relation=relation, tail_surface=tail)


def extract_triplets(enriched_caption: str, agent: AgentBackend) -> tuple[list[RawTriplet], list[dict]]:
    """Run the extractor agent and parse its output.

    Every non-blank output line is either parsed into a triplet or recorded
    as a drop; line order is preserved.
    """
    prompt = prompts.render("extractor", CAPTION=enriched_caption)
    out = agent.complete(AgentRole.EXTRACTOR, prompt)
    triplets: list[RawTriplet] = []
    drops: list[dict] = []
    for line in out.splitlines():
        if not line.strip():
            continue
        parsed = parse_triplet_line(line)
        if parsed is None:
            drops.append({"line": line, "reason": "malformed triplet line"})
        else:
            triplets.append(parsed)
    return triplets, drops


def normalize_entity(surface: str, agent: AgentBackend) -> str:
    """Map an entity mention to its canonical, searchable concept."""
    prompt = prompts.render("normalizer", CONCEPT=surface)
    out = agent.complete(AgentRole.NORMALIZER, prompt).strip()
    if not out or "\n" in out or len(out) > NORMALIZED_MAX_LEN:
        return surface.strip()
    return out


def _parse_inspector_score(text: str) -> int:
    match = re.search(r"-?\d+", text)
    if match is None:
        return 0
    return max(0, min(10, int(match.group())))


def inspect_and_accept(
    concept: str,
    produce: Callable[[], str],
    agent: AgentBackend,
) -> InspectionOutcome:
    """Self-reflection loop: score each produced description, retry below 7.

    The producer is invoked at most three times; an empty production counts
    as a failed attempt without consuming an inspector call.
    """
    scores: list[int | None] = []
    for attempt in range(1, MAX_PRODUCER_ATTEMPTS + 1):
        text = produce().strip()
        if not text:
            scores.append(None)
            continue
        verdict = agent.complete(
            AgentRole.INSPECTOR,
            prompts.render("inspector", CONCEPT=concept, DESCRIPTION=text),
        )
        score = _parse_inspector_score(verdict)
        scores.append(score)
        if score >= ACCEPT_THRESHOLD:
            return InspectionOutcome(accepted=True, text=text, attempts=attempt, scores=scores)
    return InspectionOutcome(accepted=False, text=None, attempts=MAX_PRODUCER_ATTEMPTS, scores=scores)


def search_descriptions(
    concept: str,
    enriched_caption: str,
    kb: KnowledgeSource,
    agent: AgentBackend,
) -> CandidateDescriptions:
    """Candidate descriptions from the knowledge source, else the LLM callback.

    KB hits are capped at MAX_CANDIDATES in source order. A KB timeout is
    retried once, then treated as a miss. On a miss, the callback produces a
    single description gated by the inspector loop; if every attempt is
    rejected, the candidate set comes back empty.
    """
    candidates: list[str] = []
    for _ in range(2):
        try:
            candidates = kb.query(concept)
            break
        except KbTimeoutError:
            logger.warning("knowledge source timed out for %r", concept)
            candidates = []
    if candidates:
        return CandidateDescriptions(
            concept=concept,
            candidates=list(candidates[:MAX_CANDIDATES]),
            origin=CandidateOrigin.KNOWLEDGE_BASE,
        )

    def produce() -> str:
        return agent.complete(
            AgentRole.SEARCHER_CALLBACK,
            prompts.render("searcher_callback", CONCEPT=concept, CAPTION=enriched_caption),
        )

    outcome = inspect_and_accept(concept, produce, agent)
    texts = [outcome.text] if outcome.accepted else []
    return CandidateDescriptions(
        concept=concept, candidates=texts, origin=CandidateOrigin.LLM_CALLBACK
    )


_TOKEN_RE = re.compile(r"[a-z0-9']+")


def token_overlap(a: str, b: str) -> float:
    """Jaccard overlap of lowercased word sets."""
    ta = set(_TOKEN_RE.findall(a.lower()))
    tb = set(_TOKEN_RE.findall(b.lower()))
    if not ta and not tb:
        return 1.0
    if not ta or not tb:
        return 0.0
    return len(ta & tb) / len(ta | tb)


def select_description(
    concept: str,
    enriched_caption: str,
    candidates: CandidateDescriptions,
    agent: AgentBackend,
) -> str:
    """Pick the context-appropriate candidate; repair non-verbatim output.

    A single-candidate set is returned directly without an agent call. If the
    agent's choice matches no candidate verbatim (after trimming), the
    candidate with the highest token overlap wins, lowest index on ties.
    """
    texts = candidates.candidates
    if not texts:
        raise ValueError("select_description requires a non-empty candidate set")
    if len(texts) == 1:
        return texts[0]
    prompt = prompts.render(
        "selector",
        CONCEPT=concept,
        CAPTION=enriched_caption,
        ENUMERATED_CANDIDATES=prompts.enumerate_candidates(texts),
    )
    out = agent.complete(AgentRole.SELECTOR, prompt).strip()
    for candidate in texts:
        if candidate.strip() == out:
            return candidate
    best = max(range(len(texts)), key=lambda i: (token_overlap(out, texts[i]), -i))
    return texts[best]


def refine_description(
    original_surface: str, concept: str, selected: str, agent: AgentBackend
) -> str:
    """One refiner invocation adapting the selected description to the mention."""
    prompt = prompts.render(
        "refiner",
        ORIGINAL_CONCEPT=original_surface,
        SEARCHABLE_CONCEPT=concept,
        SELECTED_DESCRIPTION=selected,
    )
    return agent.complete(AgentRole.REFINER, prompt).strip()


@dataclass
class BuildConfig:
    dims: Mapping[Modality, int]


def build_graph(
    corpus: list[CorpusSample],
    backends: BackendSet,
    config: BuildConfig,
) -> tuple[Graph, BuildReport]:
    """Run the full construction pipeline over a corpus.

    Deterministic given deterministic backends: samples are processed in
    corpus order and all commits go through a single builder. A transport
    failure aborts the build; any other per-sample agent failure skips that
    sample with an audit record.
    """
    builder = GraphBuilder(config.dims)
    report = BuildReport()
    norm_cache: dict[str, str] = {}
    described: set[EntityKey] = set()

    for sample in corpus:
        try:
            enriched = rewrite_caption(sample, backends.agent, report)
            raw_triplets, drops = extract_triplets(enriched, backends.agent)
            for drop in drops:
                report.parse_drops.append({"sample": sample.id, **drop})
            if not raw_triplets:
                report.zero_triplet_samples.append(sample.id)

            triplet_keys: list[tuple[EntityKey, str, EntityKey]] = []
            for raw in raw_triplets:
                head_key = _entity_key(raw.head_surface, norm_cache, backends.agent)
                tail_key = _entity_key(raw.tail_surface, norm_cache, backends.agent)
                triplet_keys.append((head_key, raw.relation, tail_key))

            descriptions: dict[EntityKey, str] = {}
            for key in iter_entity_keys(triplet_keys):
                if key in described:
                    continue
                surface, concept = key
                found = search_descriptions(concept, enriched, backends.kb, backends.agent)
                if not found.candidates:
                    report.discarded_descriptions.append(
                        {"sample": sample.id, "surface": surface, "concept": concept,
                         "stage": "callback"}
                    )
                    continue
                selected = select_description(concept, enriched, found, backends.agent)
                outcome = inspect_and_accept(
                    concept,
                    lambda: refine_description(surface, concept, selected, backends.agent),
                    backends.agent,
                )
                if outcome.accepted:
                    descriptions[key] = outcome.text
                    described.add(key)
                else:
                    report.discarded_descriptions.append(
                        {"sample": sample.id, "surface": surface, "concept": concept,
                         "stage": "refiner"}
                    )
        except BackendUnavailableError:
            raise
        except Exception as exc:
            logger.warning("skipping sample %d: %s", sample.id, exc)
            report.skipped_samples.append({"sample": sample.id, "reason": str(exc)})
            continue

        media: list[tuple[Modality, str, list[float]]] = []
        if sample.audio_ref is not None:
            media.append(
                (Modality.AUDIO, sample.audio_ref,
                 backends.embedder.embed(Modality.AUDIO.value, sample.audio_ref))
            )
        if sample.visual_ref is not None:
            media.append(
                (Modality.VISUAL, sample.visual_ref,
                 backends.embedder.embed(Modality.VISUAL.value, sample.visual_ref))
            )
        builder.add_sample(sample.id, triplet_keys, descriptions, media)

    graph = builder.finalize()
    report.description_conflicts = list(builder.description_conflicts)
    return graph, report


def _entity_key(surface: str, norm_cache: dict[str, str], agent: AgentBackend) -> EntityKey:
    if surface not in norm_cache:
        norm_cache[surface] = normalize_entity(surface, agent)
    return (surface, norm_cache[surface])
