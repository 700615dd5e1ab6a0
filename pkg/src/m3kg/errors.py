"""Exception hierarchy for the m3kg engine."""

from __future__ import annotations


class M3kgError(Exception):
    """Base class for all engine errors."""


class GraphBuildError(M3kgError):
    """Invalid input handed to the graph builder (bad dims, bad fields)."""


class CommitAfterFinalizeError(GraphBuildError):
    """add_sample called on a builder that was already finalized."""


class DimensionMismatchError(GraphBuildError):
    """Embedding length does not match the declared modality dimension."""


class GraphIntegrityError(M3kgError):
    """A graph failed validation (coverage violation or dangling reference)."""


class UnknownEntityError(M3kgError):
    """Entity id not present in the graph."""


class UnknownMediaError(M3kgError):
    """Media id not present in the graph."""


class UnknownTripletError(M3kgError):
    """Triplet id not present in the graph."""


class SchemaVersionError(M3kgError):
    """Persisted file carries an unsupported schema version or magic."""


class ManifestError(M3kgError):
    """Corpus manifest or queryset line violates its schema."""

    def __init__(self, message: str, line_no: int | None = None):
        self.line_no = line_no
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)


class BackendUnavailableError(M3kgError):
    """A model backend stayed unreachable after the configured retries."""


class BackendProtocolError(M3kgError):
    """A backend answered with a malformed or out-of-contract response."""


class KbTimeoutError(M3kgError):
    """A knowledge source timed out; retried once, then treated as empty."""


class EmptyResponseError(M3kgError):
    """The answering backend returned an empty answer."""


class IndexMissingError(M3kgError):
    """No index available for the query's modality."""


class StaleIndexCacheError(M3kgError):
    """Index sidecar does not match the current graph content hash."""


class ConfigError(M3kgError):
    """Invalid engine configuration."""
