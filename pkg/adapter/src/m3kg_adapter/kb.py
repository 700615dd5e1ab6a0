"""Knowledge sources for /v1/kb/search: local glossary or live wiki lookup."""

from __future__ import annotations

import logging

import requests

logger = logging.getLogger(__name__)

WIKIPEDIA_SUMMARY_URL = "https://en.wikipedia.org/api/rest_v1/page/summary/{title}"
WIKTIONARY_DEFINITION_URL = "https://en.wiktionary.org/api/rest_v1/page/definition/{term}"

# Small built-in glossary so the adapter serves useful lookups offline.
_LOCAL_GLOSSARY: dict[str, list[str]] = {
    "dog": ["The dog is a domesticated descendant of the wolf, kept as a pet or working animal."],
    "guitar": ["The guitar is a fretted string instrument played by strumming or plucking."],
    "rain": ["Rain is liquid water falling from clouds as precipitation."],
    "ball": ["A ball is a round object used in games, sports, and play."],
}


class LocalGlossary:
    def query(self, concept: str) -> list[str]:
        return list(_LOCAL_GLOSSARY.get(concept.lower(), []))


class WikipediaSource:
    """Page-summary lookup; redirects are resolved by the REST endpoint."""

    def __init__(self, session: requests.Session | None = None, timeout_s: float = 10.0):
        self.session = session or requests.Session()
        self.timeout_s = timeout_s

    def query(self, concept: str) -> list[str]:
        url = WIKIPEDIA_SUMMARY_URL.format(title=requests.utils.quote(concept, safe=""))
        try:
            resp = self.session.get(url, timeout=self.timeout_s)
        except requests.RequestException as exc:
            logger.warning("wikipedia lookup failed for %r: %s", concept, exc)
            return []
        if resp.status_code != 200:
            return []
        payload = resp.json()
        if payload.get("type") == "disambiguation":
            # a disambiguation blurb is not an encyclopedic description
            return []
        extract = payload.get("extract")
        return [extract] if isinstance(extract, str) and extract else []


class WiktionarySource:
    """First few plain-text definitions of the English section."""

    def __init__(self, session: requests.Session | None = None, timeout_s: float = 10.0,
                 max_definitions: int = 3):
        self.session = session or requests.Session()
        self.timeout_s = timeout_s
        self.max_definitions = max_definitions

    def query(self, concept: str) -> list[str]:
        url = WIKTIONARY_DEFINITION_URL.format(term=requests.utils.quote(concept, safe=""))
        try:
            resp = self.session.get(url, timeout=self.timeout_s)
        except requests.RequestException as exc:
            logger.warning("wiktionary lookup failed for %r: %s", concept, exc)
            return []
        if resp.status_code != 200:
            return []
        entries = resp.json().get("en", [])
        definitions: list[str] = []
        for entry in entries:
            for sense in entry.get("definitions", []):
                text = _strip_tags(sense.get("definition", ""))
                if text:
                    definitions.append(text)
                if len(definitions) >= self.max_definitions:
                    return definitions
        return definitions


def _strip_tags(html: str) -> str:
    import re

    return re.sub(r"<[^>]+>", "", html).strip()


class ChainSource:
    """First source with results wins."""

    def __init__(self, sources: list):
        self.sources = sources

    def query(self, concept: str) -> list[str]:
        for source in self.sources:
            results = source.query(concept)
            if results:
                return results
        return []


def build_kb(kind: str, session: requests.Session | None = None):
    if kind == "local":
        return LocalGlossary()
    if kind == "wikipedia":
        return ChainSource([WikipediaSource(session)])
    if kind == "wikipedia+wiktionary":
        return ChainSource([WikipediaSource(session), WiktionarySource(session)])
    raise ValueError(f"unknown kb source {kind!r}")
