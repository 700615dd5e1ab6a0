"""Corpus manifest and queryset ingestion.

Both files are JSON-lines. A corpus sample must carry a non-empty caption and
at least one media reference, otherwise its triplets could never be linked to
media and the coverage property would be unsatisfiable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .errors import ManifestError


@dataclass
class CorpusSample:
    """One aligned (text, audio, visual, metadata) record."""

    id: int
    caption: str
    audio_ref: str | None = None
    visual_ref: str | None = None
    title: str | None = None
    metadata_description: str | None = None

    def __post_init__(self) -> None:
        if not self.caption:
            raise ManifestError(f"sample {self.id}: caption must be non-empty")
        if self.audio_ref is None and self.visual_ref is None:
            raise ManifestError(f"sample {self.id}: needs at least one media reference")


@dataclass
class Query:
    """One retrieval/QA request from a queryset file."""

    id: int
    question: str
    audio_ref: str | None = None
    visual_ref: str | None = None
    reference: str | None = None

    def __post_init__(self) -> None:
        if not self.question:
            raise ManifestError(f"query {self.id}: question must be non-empty")
        if self.audio_ref is None and self.visual_ref is None:
            raise ManifestError(f"query {self.id}: needs at least one media reference")


def _parse_line(line: str, line_no: int) -> dict:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ManifestError(f"invalid JSON ({exc.msg})", line_no) from None
    if not isinstance(obj, dict):
        raise ManifestError("record is not a JSON object", line_no)
    return obj


def _require_id(obj: dict, line_no: int) -> int:
    ident = obj.get("id")
    if not isinstance(ident, int) or isinstance(ident, bool) or ident < 0:
        raise ManifestError(f"id must be a non-negative integer, got {ident!r}", line_no)
    return ident


def _optional_str(obj: dict, key: str, line_no: int) -> str | None:
    value = obj.get(key)
    if value is None:
        return None
    if not isinstance(value, str):
        raise ManifestError(f"{key} must be a string or null", line_no)
    return value


def load_manifest(path: str | Path) -> list[CorpusSample]:
    """Parse a corpus manifest; raises ManifestError with the offending line."""
    samples: list[CorpusSample] = []
    seen: set[int] = set()
    for line_no, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        obj = _parse_line(line, line_no)
        ident = _require_id(obj, line_no)
        if ident in seen:
            raise ManifestError(f"duplicate sample id {ident}", line_no)
        seen.add(ident)
        caption = obj.get("caption")
        if not isinstance(caption, str) or not caption:
            raise ManifestError("caption must be a non-empty string", line_no)
        try:
            samples.append(
                CorpusSample(
                    id=ident,
                    caption=caption,
                    audio_ref=_optional_str(obj, "audio_ref", line_no),
                    visual_ref=_optional_str(obj, "visual_ref", line_no),
                    title=_optional_str(obj, "title", line_no),
                    metadata_description=_optional_str(obj, "description", line_no),
                )
            )
        except ManifestError as exc:
            raise ManifestError(str(exc), line_no) from None
    return samples


def load_queryset(path: str | Path) -> list[Query]:
    queries: list[Query] = []
    seen: set[int] = set()
    for line_no, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        obj = _parse_line(line, line_no)
        ident = _require_id(obj, line_no)
        if ident in seen:
            raise ManifestError(f"duplicate query id {ident}", line_no)
        seen.add(ident)
        question = obj.get("question")
        if not isinstance(question, str) or not question:
            raise ManifestError("question must be a non-empty string", line_no)
        try:
            queries.append(
                Query(
                    id=ident,
                    question=question,
                    audio_ref=_optional_str(obj, "audio_ref", line_no),
                    visual_ref=_optional_str(obj, "visual_ref", line_no),
                    reference=_optional_str(obj, "reference", line_no),
                )
            )
        except ManifestError as exc:
            raise ManifestError(str(exc), line_no) from None
    return queries
