from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from m3kg.agents import (
    BuildConfig,
    CandidateOrigin,
    build_graph,
    extract_triplets,
    inspect_and_accept,
    normalize_entity,
    parse_triplet_line,
    refine_description,
    rewrite_caption,
    search_descriptions,
    select_description,
    token_overlap,
)
from m3kg.backends import (
    AgentRole,
    MappingKnowledgeSource,
    ScriptedAgent,
    StubAgentBackend,
    prompt_field,
    stub_backend_set,
)
from m3kg.corpus import CorpusSample
from m3kg.errors import KbTimeoutError
from m3kg.graph import Modality, validate

from conftest import DIMS


def stub_agents(**overrides):
    roles = {AgentRole[k.upper()]: v for k, v in overrides.items()}
    return StubAgentBackend(roles)


# --- rewriter ---------------------------------------------------------------

def test_rewriter_skipped_without_metadata():
    agent = stub_agents()
    sample = CorpusSample(id=1, caption="a dog barks", audio_ref="a.wav")
    assert rewrite_caption(sample, agent) == "a dog barks"
    assert agent.calls == []


def test_rewriter_echo_stub_returns_caption():
    agent = stub_agents()  # default rewriter echoes ORIGINAL CAPTION
    sample = CorpusSample(
        id=1, caption="a dog barks", audio_ref="a.wav", title="Dog clip"
    )
    assert rewrite_caption(sample, agent) == "a dog barks"
    assert agent.call_count(AgentRole.REWRITER) == 1


def test_rewriter_splices_breed_from_title():
    def splice(prompt: str) -> str:
        caption = prompt_field(prompt, "ORIGINAL CAPTION")
        title = prompt_field(prompt, "Title")
        breed = " ".join(title.split()[:2])
        return caption.replace("a dog", f"a {breed}")

    agent = stub_agents(rewriter=splice)
    sample = CorpusSample(
        id=1,
        caption="a dog barks",
        audio_ref="a.wav",
        title="Border Collie herding demo",
    )
    assert rewrite_caption(sample, agent) == "a Border Collie barks"


def test_rewriter_empty_output_falls_back_to_caption():
    agent = stub_agents(rewriter=lambda p: "   ")
    sample = CorpusSample(id=1, caption="a dog barks", audio_ref="a.wav", title="t")
    assert rewrite_caption(sample, agent) == "a dog barks"


# --- extractor --------------------------------------------------------------

def test_extract_single_triplet():
    agent = stub_agents(extractor=lambda p: "(dog, chases, ball)")
    triplets, drops = extract_triplets("whatever", agent)
    assert [(t.head_surface, t.relation, t.tail_surface) for t in triplets] == [
        ("dog", "chases", "ball")
    ]
    assert drops == []


def test_extract_drops_malformed_middle_line():
    agent = stub_agents(
        extractor=lambda p: "(dog, chases, ball)\nnot a triple\n(ball, hits, wall)"
    )
    triplets, drops = extract_triplets("x", agent)
    assert len(triplets) == 2
    assert len(drops) == 1
    assert drops[0]["line"] == "not a triple"


def test_extract_shared_entity_chain():
    agent = stub_agents(
        extractor=lambda p: "(a man, plays, electric guitar)\n"
        "(electric guitar, produces, distorted sound)"
    )
    triplets, _ = extract_triplets("x", agent)
    assert triplets[0].tail_surface == "electric guitar"
    assert triplets[1].head_surface == "electric guitar"


@pytest.mark.parametrize(
    "line,expected",
    [
        ("(a, b, c)", ("a", "b", "c")),
        ("  ( a man ,  plays , electric guitar )  ", ("a man", "plays", "electric guitar")),
        ("(a (small), b, c)", ("a (small)", "b", "c")),  # nested comma-free parens
        ("(x (y, z), r, t)", ("x (y, z)", "r", "t")),  # nested commas stay inside
        ("a, b, c", None),  # no parentheses
        ("(a, b)", None),  # too few separators
        ("(a, b, c, d)", None),  # too many separators
        ("(a, , c)", None),  # empty field
        ("(a, b, c", None),  # unbalanced
        ("(a)) ((b, c, d)", None),
    ],
)
def test_parse_triplet_line(line, expected):
    parsed = parse_triplet_line(line)
    if expected is None:
        assert parsed is None
    else:
        assert (parsed.head_surface, parsed.relation, parsed.tail_surface) == expected


@settings(max_examples=60, deadline=None)
@given(st.lists(st.text(alphabet=st.characters(blacklist_categories=("Cs",)), max_size=40), max_size=12))
def test_extract_accounting_property(lines):
    """Every non-blank output line is either parsed or reported as a drop."""
    text = "\n".join(lines)
    agent = stub_agents(extractor=lambda p: text)
    triplets, drops = extract_triplets("x", agent)
    non_blank = [l for l in text.splitlines() if l.strip()]
    assert len(triplets) + len(drops) == len(non_blank)
    for t in triplets:
        assert t.head_surface and t.relation and t.tail_surface


# --- normalizer -------------------------------------------------------------

def test_normalizer_singularizes_via_scripted_agent():
    agent = stub_agents(normalizer=ScriptedAgent(["dog"]))
    assert normalize_entity("dogs", agent) == "dog"
    agent = stub_agents(normalizer=ScriptedAgent(["empire"]))
    assert normalize_entity("empires", agent) == "empire"


def test_normalizer_default_stub_strips_articles_and_lowercases():
    agent = stub_agents()
    assert normalize_entity("The small brown dog", agent) == "small brown dog"


@pytest.mark.parametrize("bad", ["", "two\nlines", "x" * 129])
def test_normalizer_validation_falls_back_to_surface(bad):
    agent = stub_agents(normalizer=lambda p: bad)
    assert normalize_entity("  Dogs  ", agent) == "Dogs"


# --- searcher ---------------------------------------------------------------

def test_search_kb_hit_passthrough():
    kb = MappingKnowledgeSource({"dog": ["d1", "d2", "d3"]})
    found = search_descriptions("dog", "caption", kb, stub_agents())
    assert found.candidates == ["d1", "d2", "d3"]
    assert found.origin is CandidateOrigin.KNOWLEDGE_BASE


def test_search_kb_miss_uses_callback():
    agent = stub_agents(searcher_callback=lambda p: "A dog is a domesticated canid.")
    found = search_descriptions("dog", "caption", MappingKnowledgeSource({}), agent)
    assert found.candidates == ["A dog is a domesticated canid."]
    assert found.origin is CandidateOrigin.LLM_CALLBACK


def test_search_caps_candidates_at_five():
    kb = MappingKnowledgeSource({"dog": [f"d{i}" for i in range(9)]})
    found = search_descriptions("dog", "caption", kb, stub_agents())
    assert found.candidates == ["d0", "d1", "d2", "d3", "d4"]


class FlakyKb(MappingKnowledgeSource):
    def __init__(self, entries, failures):
        super().__init__(entries)
        self.failures = failures
        self.calls = 0

    def query(self, concept):
        self.calls += 1
        if self.calls <= self.failures:
            raise KbTimeoutError("slow")
        return super().query(concept)


def test_search_kb_timeout_retried_once_then_hit():
    kb = FlakyKb({"dog": ["d1"]}, failures=1)
    found = search_descriptions("dog", "c", kb, stub_agents())
    assert found.candidates == ["d1"]
    assert kb.calls == 2


def test_search_kb_timeout_twice_treated_as_empty():
    kb = FlakyKb({"dog": ["d1"]}, failures=2)
    agent = stub_agents(searcher_callback=lambda p: "fallback text")
    found = search_descriptions("dog", "c", kb, agent)
    assert found.origin is CandidateOrigin.LLM_CALLBACK
    assert kb.calls == 2


def test_search_callback_rejected_by_inspector_returns_empty():
    agent = stub_agents(
        searcher_callback=lambda p: "weak description",
        inspector=lambda p: "2",
    )
    found = search_descriptions("dog", "c", MappingKnowledgeSource({}), agent)
    assert found.candidates == []
    assert agent.call_count(AgentRole.SEARCHER_CALLBACK) == 3


# --- selector ---------------------------------------------------------------

def _cands(*texts):
    from m3kg.agents import CandidateDescriptions

    return CandidateDescriptions(
        concept="dog", candidates=list(texts), origin=CandidateOrigin.KNOWLEDGE_BASE
    )


def test_selector_single_candidate_skips_agent():
    agent = stub_agents()
    assert select_description("dog", "c", _cands("only"), agent) == "only"
    assert agent.calls == []


def test_selector_verbatim_choice():
    agent = stub_agents(selector=lambda p: "second text")
    chosen = select_description("dog", "c", _cands("first text", "second text", "third"), agent)
    assert chosen == "second text"


def test_selector_repairs_paraphrase_by_token_overlap():
    c1 = "a domesticated canid that barks"
    c2 = "a wild ancestral wolf species"
    c3 = "an abstract metal sculpture"
    agent = stub_agents(selector=lambda p: "a domesticated canid that barks loudly")
    chosen = select_description("dog", "c", _cands(c1, c2, c3), agent)
    assert chosen == c1
    # sanity: the repair metric indeed ranks c1 far above the others
    out = "a domesticated canid that barks loudly"
    assert token_overlap(out, c1) > 0.8
    assert token_overlap(out, c2) < 0.3
    assert token_overlap(out, c3) < 0.3


def test_selector_trims_whitespace_for_verbatim_match():
    agent = stub_agents(selector=lambda p: "  first text \n")
    assert select_description("dog", "c", _cands("first text", "other"), agent) == "first text"


# --- refiner + inspector loop -------------------------------------------------

def test_refiner_identity_when_surface_equals_concept():
    agent = stub_agents()  # default refiner echoes the selected description
    out = refine_description("dog", "dog", "A dog is a domesticated canid.", agent)
    assert out == "A dog is a domesticated canid."


def test_refiner_prefix_stub():
    def prefix(prompt):
        surface = prompt_field(prompt, "Concept (original phrasing)")
        selected = prompt.split("Selected description (about the searchable concept):\n")[1]
        selected = selected.split("\nOutput:")[0]
        return f"Referring to '{surface}': {selected}"

    agent = stub_agents(refiner=prefix)
    out = refine_description("small brown dog", "dog", "A dog is a canid.", agent)
    assert out == "Referring to 'small brown dog': A dog is a canid."


def test_inspector_accepts_first_try():
    producer = ScriptedAgent(["desc one", "desc two", "desc three"])
    agent = stub_agents(inspector=ScriptedAgent(["10"]))
    outcome = inspect_and_accept("dog", lambda: producer("x"), agent)
    assert outcome.accepted and outcome.text == "desc one"
    assert producer.calls == 1


def test_inspector_discards_after_three_rejections():
    producer = ScriptedAgent(["d1", "d2", "d3", "d4"])
    agent = stub_agents(inspector=ScriptedAgent(["0"]))
    outcome = inspect_and_accept("dog", lambda: producer("x"), agent)
    assert not outcome.accepted and outcome.text is None
    assert producer.calls == 3


def test_inspector_accepts_on_second_attempt():
    producer = ScriptedAgent(["d1", "d2"])
    agent = stub_agents(inspector=ScriptedAgent(["5", "8"]))
    outcome = inspect_and_accept("dog", lambda: producer("x"), agent)
    assert outcome.accepted and outcome.text == "d2"
    assert producer.calls == 2


def test_inspector_boundary_score_seven_accepts():
    producer = ScriptedAgent(["d1"])
    agent = stub_agents(inspector=ScriptedAgent(["7"]))
    assert inspect_and_accept("dog", lambda: producer("x"), agent).accepted


def test_inspector_unparseable_counts_as_zero():
    producer = ScriptedAgent(["d1"])
    agent = stub_agents(inspector=ScriptedAgent(["no idea"]))
    outcome = inspect_and_accept("dog", lambda: producer("x"), agent)
    assert not outcome.accepted
    assert outcome.scores == [0, 0, 0]


def test_inspector_clamps_out_of_range_scores():
    producer = ScriptedAgent(["d1"])
    agent = stub_agents(inspector=ScriptedAgent(["42"]))
    assert inspect_and_accept("dog", lambda: producer("x"), agent).accepted


def test_empty_production_counts_attempt_without_inspector_call():
    producer = ScriptedAgent(["", "good text"])
    agent = stub_agents(inspector=ScriptedAgent(["9"]))
    outcome = inspect_and_accept("dog", lambda: producer("x"), agent)
    assert outcome.accepted and outcome.text == "good text"
    assert producer.calls == 2
    assert outcome.scores == [None, 9]
    assert agent.call_count(AgentRole.INSPECTOR) == 1


# --- build_graph --------------------------------------------------------------

def _backends(**overrides):
    roles = {AgentRole[k.upper()]: v for k, v in overrides.items()}
    return stub_backend_set({m.value: d for m, d in DIMS.items()}, agent_overrides=roles)


def test_build_graph_empty_corpus():
    graph, report = build_graph([], _backends(), BuildConfig(dims=DIMS))
    assert validate(graph).valid
    assert len(graph.triplets) == 0


def test_build_graph_two_triplets_sharing_entity():
    backends = _backends(
        extractor=lambda p: "(dog, chases, ball)\n(ball, is, toy)"
    )
    corpus = [
        CorpusSample(id=1, caption="irrelevant", audio_ref="a1.wav", visual_ref="v1.mp4")
    ]
    graph, _ = build_graph(corpus, backends, BuildConfig(dims=DIMS))
    assert len(graph.entities) == 3
    assert len(graph.triplets) == 2
    for tid in graph.triplets:
        assert len(graph.media_of_triplet(tid)) == 2  # linked to audio and visual
    assert validate(graph).valid


def test_build_graph_dedups_across_samples():
    backends = _backends(extractor=lambda p: "(dog, chases, ball)")
    corpus = [
        CorpusSample(id=1, caption="one", audio_ref="a1.wav"),
        CorpusSample(id=2, caption="two", audio_ref="a2.wav"),
    ]
    graph, _ = build_graph(corpus, backends, BuildConfig(dims=DIMS))
    assert len(graph.triplets) == 1
    tid = next(iter(graph.triplets))
    assert graph.triplets[tid].sources == [1, 2]
    assert len(graph.media_of_triplet(tid)) == 2


def test_build_graph_zero_triplet_sample_contributes_media_only():
    backends = _backends(extractor=lambda p: "nothing parseable")
    corpus = [CorpusSample(id=1, caption="x", audio_ref="a1.wav")]
    graph, report = build_graph(corpus, backends, BuildConfig(dims=DIMS))
    assert len(graph.triplets) == 0
    assert len(graph.media) == 1
    assert report.zero_triplet_samples == [1]
    assert len(report.parse_drops) == 1
    assert validate(graph).valid


def test_build_graph_descriptions_from_kb(small_graph):
    kb = MappingKnowledgeSource({"dog": ["A dog is a domesticated canid."]})
    backends = _backends(extractor=lambda p: "(dog, chases, ball)")
    backends.kb = kb
    corpus = [CorpusSample(id=1, caption="c", audio_ref="a1.wav")]
    graph, _ = build_graph(corpus, backends, BuildConfig(dims=DIMS))
    dog = next(e for e in graph.entities.values() if e.surface == "dog")
    assert dog.description == "A dog is a domesticated canid."


def test_build_graph_deterministic_bytes():
    corpus = [
        CorpusSample(id=i, caption=f"the dog chases the ball {i}", audio_ref=f"a{i}.wav")
        for i in range(1, 6)
    ]
    g1, _ = build_graph(corpus, _backends(), BuildConfig(dims=DIMS))
    g2, _ = build_graph(corpus, _backends(), BuildConfig(dims=DIMS))
    assert g1.canonical_bytes() == g2.canonical_bytes()


def test_build_graph_description_discarded_keeps_entity():
    backends = _backends(
        extractor=lambda p: "(dog, chases, ball)",
        inspector=lambda p: "1",
    )
    corpus = [CorpusSample(id=1, caption="c", audio_ref="a1.wav")]
    graph, report = build_graph(corpus, backends, BuildConfig(dims=DIMS))
    dog = next(e for e in graph.entities.values() if e.surface == "dog")
    assert dog.description is None
    assert any(d["stage"] == "callback" for d in report.discarded_descriptions)
