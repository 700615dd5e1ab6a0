"""Prompt template assets and placeholder substitution.

Templates live as text files next to this module and use ``{PLACEHOLDER}``
markers. Substitution is literal string replacement of the declared markers
only, so braces in template prose (e.g. the triple-format line of the RAG
template) pass through untouched.
"""

from __future__ import annotations

from functools import lru_cache
from importlib import resources

_TEMPLATES = {
    "rewriter": "rewriter.txt",
    "extractor": "extractor.txt",
    "normalizer": "normalizer.txt",
    "searcher_callback": "searcher_callback.txt",
    "selector": "selector.txt",
    "refiner": "refiner.txt",
    "inspector": "inspector.txt",
    "grasp_filter": "grasp_filter.txt",
    "rag": "rag.txt",
    "winrate": "winrate.txt",
    "judge": "judge.txt",
}


@lru_cache(maxsize=None)
def template(name: str) -> str:
    """Raw template text for ``name`` (see ``_TEMPLATES`` for valid names)."""
    filename = _TEMPLATES[name]
    return (resources.files("m3kg.prompts") / filename).read_text(encoding="utf-8")


def render(name: str, **placeholders: str) -> str:
    """Substitute ``{KEY}`` markers in the named template.

    Every passed placeholder must occur in the template; unknown extras are
    a programming error and raise.
    """
    text = template(name)
    for key, value in placeholders.items():
        marker = "{" + key + "}"
        if marker not in text:
            raise KeyError(f"template {name!r} has no placeholder {marker}")
        text = text.replace(marker, value)
    return text


def enumerate_candidates(candidates: list[str]) -> str:
    """Render a candidate list as ``1. <text>`` per line (1-based)."""
    return "\n".join(f"{i}. {text}" for i, text in enumerate(candidates, start=1))


def enumerate_sentences(sentences: list[str]) -> str:
    """Render filter input sentences as ``0. <text>`` per line (0-based)."""
    return "\n".join(f"{i}. {text}" for i, text in enumerate(sentences))
