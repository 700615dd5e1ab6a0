"""Modality-partitioned exact nearest-neighbor retrieval over graph media.

Search is an exact L2 scan in double precision: at the target scale
(<= 1e6 items) a flat scan keeps results reproducible and testable against a
brute-force oracle, and the interface admits an approximate drop-in later.
Every ordering is pinned — (distance, id) for hits, (hop, id) for expansion —
because downstream prompt assembly must be byte-deterministic.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    DimensionMismatchError,
    IndexMissingError,
    SchemaVersionError,
    StaleIndexCacheError,
    UnknownMediaError,
)
from .graph import Graph, MediaId, Modality, SampleId, TripletId

INDEX_MAGIC = b"M3KGIDX"
INDEX_VERSION = 1


class IndexModality(str, Enum):
    AUDIO = "audio"
    VISUAL = "visual"
    AUDIOVISUAL = "audiovisual"


_MODALITY_CODE = {
    IndexModality.AUDIO: 0,
    IndexModality.VISUAL: 1,
    IndexModality.AUDIOVISUAL: 2,
}
_CODE_MODALITY = {v: k for k, v in _MODALITY_CODE.items()}


@dataclass
class IndexEntry:
    """One searchable vector: a media item, or a fused per-sample pair."""

    key: int  # media id, or sample id for fused entries
    media_ids: tuple[MediaId, ...]
    vector: list[float]


@dataclass
class ModalityIndex:
    modality: IndexModality
    dim: int
    entries: list[IndexEntry]
    exclusions: list[dict] = field(default_factory=list)
    _matrix: np.ndarray | None = None
    _norms: np.ndarray | None = None

    @property
    def matrix(self) -> np.ndarray:
        if self._matrix is None:
            self._matrix = np.array(
                [e.vector for e in self.entries], dtype=np.float64
            ).reshape(len(self.entries), self.dim)
        return self._matrix

    @property
    def norms(self) -> np.ndarray:
        """Squared row norms, precomputed for the knn prefilter."""
        if self._norms is None:
            self._norms = np.einsum("ij,ij->i", self.matrix, self.matrix)
        return self._norms


@dataclass
class RetrievalConfig:
    k: int = 5
    tau: float = math.inf
    hops: int = 1

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.tau < 0:
            raise ValueError("tau must be non-negative")
        if self.hops < 0:
            raise ValueError("hops must be non-negative")


@dataclass
class Candidate:
    key: int
    media_ids: tuple[MediaId, ...]
    distance: float


def build_index(graph: Graph, modality: IndexModality) -> ModalityIndex:
    """Index all media of one modality, or fused audio-visual pairs.

    Fused entries pair each sample's single audio and single visual item
    (visual part first); samples without exactly one of each are excluded
    and reported on the returned index.
    """
    if modality is not IndexModality.AUDIOVISUAL:
        base = Modality(modality.value)
        entries = [
            IndexEntry(key=m.id, media_ids=(m.id,), vector=list(m.embedding))
            for m in graph.media_by_modality(base)
        ]
        return ModalityIndex(modality=modality, dim=graph.dims[base], entries=entries)

    by_sample: dict[SampleId, dict[Modality, list]] = {}
    for m in sorted(graph.media.values(), key=lambda m: m.id):
        by_sample.setdefault(m.sample, {Modality.AUDIO: [], Modality.VISUAL: []})[
            m.modality
        ].append(m)
    entries = []
    exclusions = []
    for sample in sorted(by_sample):
        audio = by_sample[sample][Modality.AUDIO]
        visual = by_sample[sample][Modality.VISUAL]
        if len(audio) == 1 and len(visual) == 1:
            entries.append(
                IndexEntry(
                    key=sample,
                    media_ids=(visual[0].id, audio[0].id),
                    vector=list(visual[0].embedding) + list(audio[0].embedding),
                )
            )
        else:
            exclusions.append(
                {
                    "sample": sample,
                    "audio_items": len(audio),
                    "visual_items": len(visual),
                    "reason": "needs exactly one audio and one visual item",
                }
            )
    dim = graph.dims[Modality.VISUAL] + graph.dims[Modality.AUDIO]
    return ModalityIndex(
        modality=modality, dim=dim, entries=entries, exclusions=exclusions
    )


def fuse_query(
    visual_vec: Sequence[float],
    audio_vec: Sequence[float],
    dims: Mapping[Modality, int] | None = None,
) -> list[float]:
    """Concatenate query vectors, visual part first (matches fused entries)."""
    if dims is not None:
        if len(visual_vec) != dims[Modality.VISUAL]:
            raise DimensionMismatchError(
                f"visual query has dim {len(visual_vec)}, expected {dims[Modality.VISUAL]}"
            )
        if len(audio_vec) != dims[Modality.AUDIO]:
            raise DimensionMismatchError(
                f"audio query has dim {len(audio_vec)}, expected {dims[Modality.AUDIO]}"
            )
    return [float(x) for x in visual_vec] + [float(x) for x in audio_vec]


def _exact_distances(rows: np.ndarray, query: np.ndarray) -> np.ndarray:
    """Direct row-wise L2: sqrt of the summed squared differences, float64."""
    block = rows - query
    return np.sqrt(np.einsum("ij,ij->i", block, block))


# Below this size a direct scan is already instant; above it a BLAS matvec
# prefilter narrows the rows whose exact distance must be computed.
_PREFILTER_MIN_ENTRIES = 1024


def _candidate_rows(index: ModalityIndex, q: np.ndarray, k_eff: int) -> np.ndarray:
    """Indices guaranteed to contain the exact top-k rows.

    Uses the expansion ||x-q||^2 = ||x||^2 - 2<x,q> + ||q||^2, whose
    cancellation error is bounded well below the safety margin added to the
    partition cutoff; rows inside the widened cutoff are re-scored exactly,
    so the final ranking never depends on the approximation.
    """
    n = len(index.entries)
    if n < _PREFILTER_MIN_ENTRIES or k_eff >= n:
        return np.arange(n)
    qq = float(q @ q)
    approx = index.norms - 2.0 * (index.matrix @ q) + qq
    part = np.argpartition(approx, k_eff - 1)[:k_eff]
    scale = float(index.norms.max(initial=0.0)) + qq + 1.0
    margin = 32.0 * index.dim * np.finfo(np.float64).eps * scale
    return np.nonzero(approx <= float(approx[part].max()) + margin)[0]


def knn(index: ModalityIndex, query: Sequence[float], k: int) -> list[Candidate]:
    """Exact top-k by (distance, id); returns min(k, |entries|) candidates."""
    if len(query) != index.dim:
        raise DimensionMismatchError(
            f"query has dim {len(query)}, index dim is {index.dim}"
        )
    n = len(index.entries)
    if n == 0:
        return []
    q = np.asarray(query, dtype=np.float64)
    k_eff = min(k, n)
    cand_idx = _candidate_rows(index, q, k_eff)
    d = _exact_distances(index.matrix[cand_idx], q)
    order = sorted(range(len(cand_idx)), key=lambda i: (d[i], index.entries[cand_idx[i]].key))
    return [
        Candidate(
            key=index.entries[cand_idx[i]].key,
            media_ids=index.entries[cand_idx[i]].media_ids,
            distance=float(d[i]),
        )
        for i in order[:k_eff]
    ]


def threshold_filter(candidates: list[Candidate], tau: float) -> list[Candidate]:
    """Keep candidates within tau of the query, boundary inclusive."""
    return [c for c in candidates if c.distance <= tau]


def lift(graph: Graph, selected: Sequence[MediaId]) -> list[TripletId]:
    """Triplets linked to any selected media item.

    Deduplicated and ordered by (rank of the first selected item linking to
    the triplet, triplet id).
    """
    first_rank: dict[TripletId, int] = {}
    for rank, mid in enumerate(selected):
        if mid not in graph.media:
            raise UnknownMediaError(f"media {mid} not in graph")
        for tid in graph.triplets_of_media(mid):
            first_rank.setdefault(tid, rank)
    return sorted(first_rank, key=lambda tid: (first_rank[tid], tid))


def expand(graph: Graph, seed: Sequence[TripletId], hops: int) -> list[TripletId]:
    """Grow a triplet set by BFS over shared entities.

    Seed order is preserved; each hop's additions are appended in triplet-id
    order, so the result order is (hop, id).
    """
    result: list[TripletId] = []
    in_result: set[TripletId] = set()
    for tid in seed:
        if tid not in in_result:
            result.append(tid)
            in_result.add(tid)
    frontier = list(result)
    for _ in range(hops):
        new: set[TripletId] = set()
        for tid in frontier:
            t = graph.triplets[tid]
            for eid in (t.head, t.tail):
                for nid in graph.neighbors(eid):
                    if nid not in in_result:
                        new.add(nid)
        if not new:
            break
        added = sorted(new)
        result.extend(added)
        in_result.update(added)
        frontier = added
    return result


@dataclass
class RetrievalQuery:
    visual_vec: Sequence[float] | None = None
    audio_vec: Sequence[float] | None = None

    def modality(self) -> IndexModality:
        if self.visual_vec is not None and self.audio_vec is not None:
            return IndexModality.AUDIOVISUAL
        if self.visual_vec is not None:
            return IndexModality.VISUAL
        if self.audio_vec is not None:
            return IndexModality.AUDIO
        raise ValueError("query needs at least one vector")


def retrieve(
    graph: Graph,
    indices: Mapping[IndexModality, ModalityIndex],
    query: RetrievalQuery,
    config: RetrievalConfig,
) -> list[TripletId]:
    """Modality-wise retrieval: knn -> threshold -> lift -> expand."""
    modality = query.modality()
    index = indices.get(modality)
    if index is None:
        raise IndexMissingError(f"no index for modality {modality.value}")
    if modality is IndexModality.AUDIOVISUAL:
        vec = fuse_query(query.visual_vec, query.audio_vec, graph.dims)
    elif modality is IndexModality.VISUAL:
        vec = list(query.visual_vec)
    else:
        vec = list(query.audio_vec)
    hits = threshold_filter(knn(index, vec, config.k), config.tau)
    selected: list[MediaId] = []
    for c in hits:
        selected.extend(c.media_ids)
    return expand(graph, lift(graph, selected), config.hops)


# ---------------------------------------------------------------------------
# Sidecar cache
# ---------------------------------------------------------------------------

_HEADER = struct.Struct("<7sIBIQ32s")


def write_index_cache(index: ModalityIndex, path: str | Path, graph_hash: str) -> None:
    """Persist an index as the binary sidecar (vectors rounded to f32)."""
    blob = bytearray(
        _HEADER.pack(
            INDEX_MAGIC,
            INDEX_VERSION,
            _MODALITY_CODE[index.modality],
            index.dim,
            len(index.entries),
            bytes.fromhex(graph_hash),
        )
    )
    entry_fmt = struct.Struct(f"<Q{index.dim}f")
    for e in index.entries:
        blob += entry_fmt.pack(e.key, *e.vector)
    Path(path).write_bytes(bytes(blob))


def load_index_cache(path: str | Path, graph: Graph) -> ModalityIndex:
    """Rebuild an index from its sidecar; raises if stale or malformed.

    Cached vectors are float32, so a cache-loaded index is a rounded view of
    the graph's embeddings; the operational retrieval path rebuilds from the
    graph instead.
    """
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise SchemaVersionError("index cache truncated")
    magic, version, code, dim, count, stored_hash = _HEADER.unpack_from(raw, 0)
    if magic != INDEX_MAGIC:
        raise SchemaVersionError("bad index cache magic")
    if version != INDEX_VERSION:
        raise SchemaVersionError(f"unsupported index cache version {version}")
    if stored_hash.hex() != graph.content_hash():
        raise StaleIndexCacheError("index cache does not match graph content")
    modality = _CODE_MODALITY[code]
    entry_fmt = struct.Struct(f"<Q{dim}f")
    expected = _HEADER.size + count * entry_fmt.size
    if len(raw) != expected:
        raise SchemaVersionError("index cache length mismatch")
    entries = []
    offset = _HEADER.size
    for _ in range(count):
        values = entry_fmt.unpack_from(raw, offset)
        offset += entry_fmt.size
        key = values[0]
        vector = [float(x) for x in values[1:]]
        entries.append(IndexEntry(key=key, media_ids=_resolve_media(graph, modality, key),
                                  vector=vector))
    return ModalityIndex(modality=modality, dim=dim, entries=entries)


def _resolve_media(graph: Graph, modality: IndexModality, key: int) -> tuple[MediaId, ...]:
    if modality is not IndexModality.AUDIOVISUAL:
        return (key,)
    visual = [m.id for m in graph.media.values()
              if m.sample == key and m.modality is Modality.VISUAL]
    audio = [m.id for m in graph.media.values()
             if m.sample == key and m.modality is Modality.AUDIO]
    if len(visual) != 1 or len(audio) != 1:
        raise StaleIndexCacheError(f"sample {key} is no longer a fused pair")
    return (visual[0], audio[0])
