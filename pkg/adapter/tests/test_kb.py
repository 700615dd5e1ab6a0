from __future__ import annotations

import pytest
import requests

from m3kg_adapter.kb import (
    ChainSource,
    LocalGlossary,
    WikipediaSource,
    WiktionarySource,
    build_kb,
)


class FakeResponse:
    def __init__(self, status_code=200, payload=None):
        self.status_code = status_code
        self._payload = payload or {}

    def json(self):
        return self._payload


class FakeSession:
    def __init__(self, responses):
        self.responses = list(responses)
        self.urls = []

    def get(self, url, timeout=None):
        self.urls.append(url)
        if isinstance(self.responses[0], Exception):
            raise self.responses.pop(0)
        return self.responses.pop(0)


def test_local_glossary_hit_and_miss():
    kb = LocalGlossary()
    assert kb.query("dog")
    assert kb.query("DOG")  # case-insensitive
    assert kb.query("xylophone hamster") == []


def test_wikipedia_summary_extracted():
    session = FakeSession([FakeResponse(200, {"type": "standard", "extract": "A dog is a canid."})])
    source = WikipediaSource(session)
    assert source.query("dog") == ["A dog is a canid."]
    assert "en.wikipedia.org" in session.urls[0]
    assert session.urls[0].endswith("/page/summary/dog")


def test_wikipedia_disambiguation_skipped():
    session = FakeSession([FakeResponse(200, {"type": "disambiguation", "extract": "may refer to"})])
    assert WikipediaSource(session).query("bank") == []


def test_wikipedia_missing_page_and_network_error():
    assert WikipediaSource(FakeSession([FakeResponse(404, {})])).query("zzz") == []
    session = FakeSession([requests.ConnectionError("down")])
    assert WikipediaSource(session).query("dog") == []


def test_wikipedia_quotes_title():
    session = FakeSession([FakeResponse(200, {"extract": "x"})])
    WikipediaSource(session).query("electric guitar")
    assert session.urls[0].endswith("/page/summary/electric%20guitar")


def test_wiktionary_definitions_strip_markup():
    payload = {
        "en": [
            {
                "definitions": [
                    {"definition": "A <b>domesticated</b> canid."},
                    {"definition": "A contemptible person."},
                    {"definition": ""},
                    {"definition": "To follow persistently."},
                    {"definition": "never reached"},
                ]
            }
        ]
    }
    source = WiktionarySource(FakeSession([FakeResponse(200, payload)]), max_definitions=3)
    assert source.query("dog") == [
        "A domesticated canid.",
        "A contemptible person.",
        "To follow persistently.",
    ]


def test_chain_source_first_hit_wins():
    empty = LocalGlossary()
    wiki = WikipediaSource(FakeSession([FakeResponse(200, {"extract": "From wiki."})]))
    chain = ChainSource([empty, wiki])
    assert chain.query("quasar") == ["From wiki."]


def test_build_kb_selection():
    assert isinstance(build_kb("local"), LocalGlossary)
    assert isinstance(build_kb("wikipedia"), ChainSource)
    assert isinstance(build_kb("wikipedia+wiktionary"), ChainSource)
    with pytest.raises(ValueError):
        build_kb("oracle-of-delphi")


def test_kb_endpoint_serves_local_glossary(client):
    response = client.post("/v1/kb/search", json={"concept": "dog"})
    assert response.status_code == 200
    candidates = response.json()["candidates"]
    assert candidates and all(isinstance(c, str) for c in candidates)


def test_kb_endpoint_empty_for_unknown_concept(client):
    response = client.post("/v1/kb/search", json={"concept": "zzzap"})
    assert response.status_code == 200
    assert response.json() == {"candidates": []}
