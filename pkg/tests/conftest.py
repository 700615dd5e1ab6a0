from __future__ import annotations

from pathlib import Path

import pytest

from m3kg.backends import StubEmbedder
from m3kg.graph import Graph, GraphBuilder, Modality

FIXTURES = Path(__file__).parent / "fixtures"
GOLDEN = Path(__file__).parent / "golden"

DIMS = {Modality.AUDIO: 4, Modality.VISUAL: 4}


def embed(modality: Modality, ref: str, seed: int = 0) -> list[float]:
    return StubEmbedder({m.value: d for m, d in DIMS.items()}, seed=seed).embed(
        modality.value, ref
    )


def build_small_graph() -> Graph:
    """Three samples with overlapping entities: two multi-hop chains.

    dog -chases-> ball -rolls down-> hill, and
    a man -plays-> electric guitar -produces-> distorted sound,
    plus a rain self-loop. All embeddings come from the stub embedder.
    """
    b = GraphBuilder(DIMS)
    dog = ("dog", "dog")
    ball = ("ball", "ball")
    man = ("a man", "man")
    guitar = ("electric guitar", "electric guitar")
    sound = ("distorted sound", "distorted sound")
    rain = ("rain", "rain")
    hill = ("hill", "hill")

    b.add_sample(
        1,
        [(dog, "chases", ball), (man, "plays", guitar)],
        {
            dog: "A dog is a domesticated canid.",
            ball: "A ball is a round object.",
            guitar: "An electric guitar is a stringed instrument with magnetic pickups.",
        },
        [
            (Modality.AUDIO, "a1.wav", embed(Modality.AUDIO, "a1.wav")),
            (Modality.VISUAL, "v1.mp4", embed(Modality.VISUAL, "v1.mp4")),
        ],
    )
    b.add_sample(
        2,
        [(guitar, "produces", sound), (rain, "follows", rain)],
        {},
        [(Modality.AUDIO, "a2.wav", embed(Modality.AUDIO, "a2.wav"))],
    )
    b.add_sample(
        3,
        [(ball, "rolls down", hill)],
        {hill: "A hill is a raised area of land."},
        [(Modality.VISUAL, "v3.mp4", embed(Modality.VISUAL, "v3.mp4"))],
    )
    return b.finalize()


@pytest.fixture
def small_graph() -> Graph:
    return build_small_graph()


@pytest.fixture
def dims():
    return dict(DIMS)
