"""Exception hierarchy shared by all engine modules."""

from __future__ import annotations


class EngineError(Exception):
    """Base class for every error raised by this package."""


class InvalidConfigError(EngineError):
    """A configuration value is out of range or inconsistent."""


class DegenerateVectorError(EngineError):
    """A zero-norm vector reached an operation that needs a direction."""


class DimensionMismatchError(EngineError):
    """Vectors of different dimension were combined."""


class TransportError(EngineError):
    """The external embedding service could not be reached or answered badly."""

    def __init__(self, message: str, endpoint: str):
        super().__init__(f"{message} (endpoint: {endpoint})")
        self.endpoint = endpoint


class InvalidQueryError(EngineError):
    """The query is empty or otherwise unusable."""


class EmptyMemoryError(EngineError):
    """A query was issued against a memory with no summaries."""


class SequencingError(EngineError):
    """A segment arrived out of order during incremental append."""


class CorruptStateError(EngineError):
    """Memory and local graphs disagree with each other or with the document."""


class ResourceLimitError(EngineError):
    """A dense-oracle request exceeded the configured size cap."""


class SnapshotFormatError(EngineError):
    """A snapshot file is truncated, corrupt, or from an incompatible version."""


class CorpusFormatError(EngineError):
    """A corpus file violates the one-JSON-object-per-line contract."""
