"""m3kg: multi-hop multimodal knowledge graph engine for retrieval-augmented
generation — agent-driven construction, modality-wise exact retrieval,
grounded pruning, and deterministic prompt assembly."""

__version__ = "0.1.0"

from .corpus import CorpusSample, Query
from .graph import (
    Entity,
    Graph,
    GraphBuilder,
    Link,
    MediaItem,
    Modality,
    Triplet,
    ValidationReport,
    load,
    neighbors,
    save,
    validate,
)

__all__ = [
    "CorpusSample",
    "Entity",
    "Graph",
    "GraphBuilder",
    "Link",
    "MediaItem",
    "Modality",
    "Query",
    "Triplet",
    "ValidationReport",
    "load",
    "neighbors",
    "save",
    "validate",
    "__version__",
]
