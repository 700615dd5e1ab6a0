"""Prompt assembly and dispatch to the answering multimodal model.

Rendering is a pure function of the question, the kept triplet sequence, and
the graph's surfaces and descriptions: nothing is synthesized at render time,
and identical inputs give byte-identical prompts. Media references travel
out-of-band in the backend request, never inside the prompt text.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import prompts
from .backends import AnswerBackend
from .errors import EmptyResponseError
from .graph import Graph, Triplet, TripletId

DEFAULT_CHAR_BUDGET = 16_384

_MISSING = "none"


@dataclass
class AugmentedPrompt:
    text: str
    triple_count: int
    truncated_count: int
    query_ref: object | None = None


def render_triple_line(i: int, t: Triplet | TripletId, graph: Graph) -> str:
    """One 1-based ``[i] head=... | relation=... | tail=...`` evidence line.

    A discarded description renders as the literal ``none`` so the line
    grammar stays fixed for downstream parsing.
    """
    if isinstance(t, int):
        t = graph.triplet(t)
    head = graph.entity(t.head)
    tail = graph.entity(t.tail)
    return (
        f"[{i}] head={head.surface} | relation={t.relation} | tail={tail.surface}"
        f" || head_description={head.description or _MISSING}"
        f" | tail_description={tail.description or _MISSING}"
    )


def _render(question: str, lines: list[str]) -> str:
    block = "\n".join(lines) if lines else "(none)"
    return prompts.render("rag", QUERY=question, TRIPLES_BLOCK=block)


def assemble(
    question: str,
    kept: list[TripletId],
    graph: Graph,
    char_budget: int = DEFAULT_CHAR_BUDGET,
    query_ref: object | None = None,
) -> AugmentedPrompt:
    """Render the full graph-augmented prompt.

    Overflowing the character budget drops whole triple lines from the end
    of the kept order; an empty block renders as the literal ``(none)``.
    """
    lines = [render_triple_line(i, tid, graph) for i, tid in enumerate(kept, start=1)]
    truncated = 0
    text = _render(question, lines)
    while len(text) > char_budget and lines:
        lines.pop()
        truncated += 1
        text = _render(question, lines)
    return AugmentedPrompt(
        text=text,
        triple_count=len(lines),
        truncated_count=truncated,
        query_ref=query_ref,
    )


def answer(
    question: str,
    kept: list[TripletId],
    graph: Graph,
    backend: AnswerBackend,
    audio_ref: str | None = None,
    visual_ref: str | None = None,
    char_budget: int = DEFAULT_CHAR_BUDGET,
) -> str:
    """Assemble the prompt and dispatch; the answer is returned verbatim.

    An empty backend response is an error: answers are the product, so there
    is no silent fallback.
    """
    prompt = assemble(question, kept, graph, char_budget=char_budget)
    text = backend.answer(prompt.text, audio_ref, visual_ref)
    if not text:
        raise EmptyResponseError("answering backend returned an empty response")
    return text
