"""Multimodal knowledge graph store.

The graph holds entities, relation triplets, audio/visual media items, and
triplet-to-media links. Every triplet in a finalized graph must be linked to
at least one media item (the coverage property), so every fact stays
reachable from a media-level query. Graphs are built through a single-writer
:class:`GraphBuilder` and become immutable once finalized.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import (
    CommitAfterFinalizeError,
    DimensionMismatchError,
    GraphBuildError,
    GraphIntegrityError,
    SchemaVersionError,
    UnknownEntityError,
    UnknownMediaError,
    UnknownTripletError,
)

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1

# Identifiers are plain unsigned ints; aliases document intent only.
EntityId = int
TripletId = int
MediaId = int
SampleId = int


class Modality(str, Enum):
    AUDIO = "audio"
    VISUAL = "visual"


# (surface, normalized) pair — the global identity key of an entity.
EntityKey = tuple[str, str]


@dataclass
class Entity:
    """An entity mention with its canonical concept and optional description."""

    id: EntityId
    surface: str
    normalized: str
    description: str | None = None

    @property
    def key(self) -> EntityKey:
        return (self.surface, self.normalized)


@dataclass
class Triplet:
    """A (head, relation, tail) fact with provenance over source samples."""

    id: TripletId
    head: EntityId
    relation: str
    tail: EntityId
    sources: list[SampleId] = field(default_factory=list)


@dataclass
class MediaItem:
    """One audio or visual record with its embedding vector."""

    id: MediaId
    modality: Modality
    content_ref: str
    embedding: list[float]
    sample: SampleId


@dataclass(frozen=True)
class Link:
    triplet: TripletId
    media: MediaId


@dataclass
class ValidationReport:
    """Outcome of a full structural scan of a graph."""

    coverage_violations: list[TripletId] = field(default_factory=list)
    dangling_refs: list[str] = field(default_factory=list)
    self_loops: list[TripletId] = field(default_factory=list)

    @property
    def valid(self) -> bool:
        return not self.coverage_violations and not self.dangling_refs


def _check_embedding(embedding: Sequence[float], dim: int) -> list[float]:
    vec = [float(x) for x in embedding]
    if len(vec) != dim:
        raise DimensionMismatchError(
            f"embedding has length {len(vec)}, declared dimension is {dim}"
        )
    for x in vec:
        if not math.isfinite(x):
            raise GraphBuildError("embedding contains a non-finite value")
    return vec


class Graph:
    """A finalized, immutable multimodal knowledge graph.

    Safe for unlimited concurrent readers; mutation goes through
    :class:`GraphBuilder` and a rebuild.
    """

    def __init__(
        self,
        dims: Mapping[Modality, int],
        entities: dict[EntityId, Entity],
        triplets: dict[TripletId, Triplet],
        media: dict[MediaId, MediaItem],
        links: set[Link],
    ):
        self.dims: dict[Modality, int] = dict(dims)
        self.entities = entities
        self.triplets = triplets
        self.media = media
        self.links = links
        # entity id -> sorted triplet ids touching it
        self._adjacency: dict[EntityId, tuple[TripletId, ...]] = {}
        adj: dict[EntityId, set[TripletId]] = {}
        for t in triplets.values():
            adj.setdefault(t.head, set()).add(t.id)
            adj.setdefault(t.tail, set()).add(t.id)
        for eid in entities:
            self._adjacency[eid] = tuple(sorted(adj.get(eid, ())))
        # triplet id -> sorted media ids linked to it, and the reverse
        t2m: dict[TripletId, set[MediaId]] = {}
        m2t: dict[MediaId, set[TripletId]] = {}
        for link in links:
            t2m.setdefault(link.triplet, set()).add(link.media)
            m2t.setdefault(link.media, set()).add(link.triplet)
        self._triplet_media = {tid: tuple(sorted(ms)) for tid, ms in t2m.items()}
        self._media_triplets = {mid: tuple(sorted(ts)) for mid, ts in m2t.items()}

    def neighbors(self, entity: EntityId) -> tuple[TripletId, ...]:
        """All triplets whose head or tail is ``entity``, in triplet-id order."""
        if entity not in self.entities:
            raise UnknownEntityError(f"entity {entity} not in graph")
        return self._adjacency[entity]

    def triplets_of_media(self, media: MediaId) -> tuple[TripletId, ...]:
        """Triplets linked to a media item, in triplet-id order."""
        if media not in self.media:
            raise UnknownMediaError(f"media {media} not in graph")
        return self._media_triplets.get(media, ())

    def media_of_triplet(self, triplet: TripletId) -> tuple[MediaId, ...]:
        if triplet not in self.triplets:
            raise UnknownTripletError(f"triplet {triplet} not in graph")
        return self._triplet_media.get(triplet, ())

    def entity(self, entity: EntityId) -> Entity:
        try:
            return self.entities[entity]
        except KeyError:
            raise UnknownEntityError(f"entity {entity} not in graph") from None

    def triplet(self, triplet: TripletId) -> Triplet:
        try:
            return self.triplets[triplet]
        except KeyError:
            raise UnknownTripletError(f"triplet {triplet} not in graph") from None

    def media_item(self, media: MediaId) -> MediaItem:
        try:
            return self.media[media]
        except KeyError:
            raise UnknownMediaError(f"media {media} not in graph") from None

    def media_by_modality(self, modality: Modality) -> list[MediaItem]:
        return sorted(
            (m for m in self.media.values() if m.modality is modality),
            key=lambda m: m.id,
        )

    def canonical_bytes(self) -> bytes:
        """Serialized form of the graph; identical graphs give identical bytes."""
        lines = [
            _dump(
                {
                    "kind": "header",
                    "version": SCHEMA_VERSION,
                    "dims": {
                        "audio": self.dims[Modality.AUDIO],
                        "visual": self.dims[Modality.VISUAL],
                    },
                }
            )
        ]
        for eid in sorted(self.entities):
            e = self.entities[eid]
            lines.append(
                _dump(
                    {
                        "kind": "entity",
                        "id": e.id,
                        "surface": e.surface,
                        "normalized": e.normalized,
                        "description": e.description,
                    }
                )
            )
        for tid in sorted(self.triplets):
            t = self.triplets[tid]
            lines.append(
                _dump(
                    {
                        "kind": "triplet",
                        "id": t.id,
                        "head": t.head,
                        "relation": t.relation,
                        "tail": t.tail,
                        "sources": list(t.sources),
                    }
                )
            )
        for mid in sorted(self.media):
            m = self.media[mid]
            lines.append(
                _dump(
                    {
                        "kind": "media",
                        "id": m.id,
                        "modality": m.modality.value,
                        "content_ref": m.content_ref,
                        "sample": m.sample,
                        "embedding": m.embedding,
                    }
                )
            )
        for link in sorted(self.links, key=lambda l: (l.triplet, l.media)):
            lines.append(_dump({"kind": "link", "triplet": link.triplet, "media": link.media}))
        return ("\n".join(lines) + "\n").encode("utf-8")

    def content_hash(self) -> str:
        return hashlib.sha256(self.canonical_bytes()).hexdigest()


def _dump(obj: dict) -> str:
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":"))


class GraphBuilder:
    """Single-writer accumulator for a graph under construction."""

    def __init__(self, dims: Mapping[Modality, int]):
        for modality in (Modality.AUDIO, Modality.VISUAL):
            if modality not in dims or int(dims[modality]) < 1:
                raise GraphBuildError(f"missing or invalid dimension for {modality.value}")
        self.dims = {m: int(dims[m]) for m in (Modality.AUDIO, Modality.VISUAL)}
        self._entities: dict[EntityId, Entity] = {}
        self._entity_by_key: dict[EntityKey, EntityId] = {}
        self._triplets: dict[TripletId, Triplet] = {}
        self._triplet_by_struct: dict[tuple[EntityId, str, EntityId], TripletId] = {}
        self._media: dict[MediaId, MediaItem] = {}
        self._links: set[Link] = set()
        self._next_entity = 1
        self._next_triplet = 1
        self._next_media = 1
        self._finalized = False
        self.description_conflicts: list[dict] = []

    def _intern_entity(self, surface: str, normalized: str) -> EntityId:
        if not surface:
            raise GraphBuildError("entity surface must be non-empty")
        if not normalized or normalized != normalized.strip():
            raise GraphBuildError(
                f"normalized form {normalized!r} must be non-empty and stripped"
            )
        key = (surface, normalized)
        eid = self._entity_by_key.get(key)
        if eid is None:
            eid = self._next_entity
            self._next_entity += 1
            self._entities[eid] = Entity(id=eid, surface=surface, normalized=normalized)
            self._entity_by_key[key] = eid
        return eid

    def add_sample(
        self,
        sample_id: SampleId,
        triplets: Sequence[tuple[EntityKey, str, EntityKey]],
        descriptions: Mapping[EntityKey, str],
        media: Sequence[tuple[Modality, str, Sequence[float]]],
    ) -> list[TripletId]:
        """Commit one sample's triplets, descriptions, and media.

        Entities are deduplicated by (surface, normalized); triplets by
        (head, relation, tail) with provenance extended. Every triplet of the
        sample is linked to every media item of the sample. Returns one
        triplet id per input row, in input order.
        """
        if self._finalized:
            raise CommitAfterFinalizeError("graph already finalized")

        media_ids: list[MediaId] = []
        for modality, content_ref, embedding in media:
            modality = Modality(modality)
            vec = _check_embedding(embedding, self.dims[modality])
            mid = self._next_media
            self._next_media += 1
            self._media[mid] = MediaItem(
                id=mid,
                modality=modality,
                content_ref=content_ref,
                embedding=vec,
                sample=sample_id,
            )
            media_ids.append(mid)

        sample_keys: set[EntityKey] = set()
        triplet_ids: list[TripletId] = []
        for (head_key, relation, tail_key) in triplets:
            if not relation:
                raise GraphBuildError("triplet relation must be non-empty")
            head = self._intern_entity(*head_key)
            tail = self._intern_entity(*tail_key)
            sample_keys.add(self._entities[head].key)
            sample_keys.add(self._entities[tail].key)
            struct = (head, relation, tail)
            tid = self._triplet_by_struct.get(struct)
            if tid is None:
                tid = self._next_triplet
                self._next_triplet += 1
                self._triplets[tid] = Triplet(
                    id=tid, head=head, relation=relation, tail=tail, sources=[sample_id]
                )
                self._triplet_by_struct[struct] = tid
            elif sample_id not in self._triplets[tid].sources:
                self._triplets[tid].sources.append(sample_id)
            triplet_ids.append(tid)

        for tid in triplet_ids:
            for mid in media_ids:
                self._links.add(Link(triplet=tid, media=mid))

        for key, text in descriptions.items():
            if key not in sample_keys:
                raise GraphBuildError(
                    f"description for entity {key!r} not among this sample's entities"
                )
            if not text:
                raise GraphBuildError("entity description must be non-empty")
            entity = self._entities[self._entity_by_key[key]]
            if entity.description is None:
                entity.description = text
            elif entity.description != text:
                # First accepted description wins; record the losing one.
                self.description_conflicts.append(
                    {"entity": entity.id, "kept": entity.description, "rejected": text,
                     "sample": sample_id}
                )
                logger.info(
                    "description conflict for entity %d (sample %d): keeping first",
                    entity.id,
                    sample_id,
                )
        return triplet_ids

    def finalize(self) -> Graph:
        """Freeze the graph; raises if the coverage property does not hold."""
        if self._finalized:
            raise CommitAfterFinalizeError("finalize called twice")
        self._finalized = True
        graph = Graph(self.dims, self._entities, self._triplets, self._media, self._links)
        report = validate(graph)
        if not report.valid:
            raise GraphIntegrityError(
                f"graph fails validation: {len(report.coverage_violations)} coverage "
                f"violation(s), {len(report.dangling_refs)} dangling reference(s)"
            )
        return graph


def validate(graph: Graph) -> ValidationReport:
    """Full structural scan; never raises.

    Reports every triplet without a media link, every dangling id reference,
    and every self-loop (self-loops are legal but surfaced for audit).
    """
    report = ValidationReport()
    linked: set[TripletId] = set()
    for link in graph.links:
        linked.add(link.triplet)
        if link.triplet not in graph.triplets:
            report.dangling_refs.append(f"link references unknown triplet {link.triplet}")
        if link.media not in graph.media:
            report.dangling_refs.append(f"link references unknown media {link.media}")
    for tid in sorted(graph.triplets):
        t = graph.triplets[tid]
        if t.head not in graph.entities:
            report.dangling_refs.append(f"triplet {tid} references unknown head {t.head}")
        if t.tail not in graph.entities:
            report.dangling_refs.append(f"triplet {tid} references unknown tail {t.tail}")
        if tid not in linked:
            report.coverage_violations.append(tid)
        if t.head == t.tail:
            report.self_loops.append(tid)
    report.dangling_refs.sort()
    return report


def neighbors(graph: Graph, entity: EntityId) -> tuple[TripletId, ...]:
    """Module-level alias of :meth:`Graph.neighbors`."""
    return graph.neighbors(entity)


def save(graph: Graph, path: str | Path) -> None:
    Path(path).write_bytes(graph.canonical_bytes())


def load(path: str | Path, check: bool = True) -> Graph:
    """Load a graph file; with check=True any integrity failure raises."""
    raw = Path(path).read_bytes().decode("utf-8")
    lines = [line for line in raw.split("\n") if line]
    if not lines:
        raise SchemaVersionError("empty graph file")
    header = json.loads(lines[0])
    if header.get("kind") != "header":
        raise SchemaVersionError("first record is not a header")
    if header.get("version") != SCHEMA_VERSION:
        raise SchemaVersionError(f"unsupported schema version {header.get('version')!r}")
    dims = {
        Modality.AUDIO: int(header["dims"]["audio"]),
        Modality.VISUAL: int(header["dims"]["visual"]),
    }
    entities: dict[EntityId, Entity] = {}
    triplets: dict[TripletId, Triplet] = {}
    media: dict[MediaId, MediaItem] = {}
    links: set[Link] = set()
    for i, line in enumerate(lines[1:], start=2):
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise GraphIntegrityError(f"line {i}: invalid JSON ({exc})") from None
        kind = rec.get("kind")
        if kind == "entity":
            entities[rec["id"]] = Entity(
                id=rec["id"],
                surface=rec["surface"],
                normalized=rec["normalized"],
                description=rec["description"],
            )
        elif kind == "triplet":
            triplets[rec["id"]] = Triplet(
                id=rec["id"],
                head=rec["head"],
                relation=rec["relation"],
                tail=rec["tail"],
                sources=list(rec["sources"]),
            )
        elif kind == "media":
            modality = Modality(rec["modality"])
            media[rec["id"]] = MediaItem(
                id=rec["id"],
                modality=modality,
                content_ref=rec["content_ref"],
                embedding=_check_embedding(rec["embedding"], dims[modality]),
                sample=rec["sample"],
            )
        elif kind == "link":
            links.add(Link(triplet=rec["triplet"], media=rec["media"]))
        else:
            raise GraphIntegrityError(f"line {i}: unknown record kind {kind!r}")
    graph = Graph(dims, entities, triplets, media, links)
    if check:
        report = validate(graph)
        if not report.valid:
            detail = "; ".join(report.dangling_refs[:3])
            raise GraphIntegrityError(
                f"loaded graph fails validation: {len(report.coverage_violations)} coverage "
                f"violation(s), {len(report.dangling_refs)} dangling reference(s) {detail}"
            )
    return graph


def empty_graph(dims: Mapping[Modality, int]) -> Graph:
    return GraphBuilder(dims).finalize()


def iter_entity_keys(triplets: Iterable[tuple[EntityKey, str, EntityKey]]) -> list[EntityKey]:
    """Distinct (surface, normalized) keys of a triplet batch, in first-seen order."""
    seen: list[EntityKey] = []
    for head_key, _, tail_key in triplets:
        for key in (head_key, tail_key):
            if key not in seen:
                seen.append(key)
    return seen
