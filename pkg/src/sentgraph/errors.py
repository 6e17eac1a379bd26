"""Exception types raised across the engine."""

from __future__ import annotations


class SentGraphError(Exception):
    """Base class for all engine errors."""


class EmptySession(SentGraphError, ValueError):
    pass


class InvalidTurn(SentGraphError, ValueError):
    pass


class EmptyCorpus(SentGraphError, ValueError):
    pass


class ProviderUnavailable(SentGraphError):
    """Remote embedding provider failed; callers may retry."""


class DimensionMismatch(SentGraphError, ValueError):
    pass


class ZeroVector(SentGraphError, ValueError):
    pass


class UnknownTable(SentGraphError, KeyError):
    pass


class StorageError(SentGraphError, OSError):
    """A store or graph file could not be read or written (missing, truncated, corrupt)."""


class SchemaVersionMismatch(SentGraphError):
    pass


class ProviderFingerprintMismatch(UserWarning):
    """Loaded file was built with a different embedding provider."""


class UnknownNode(SentGraphError, KeyError):
    pass


class OrphanSentence(SentGraphError):
    pass


class GraphMissing(SentGraphError):
    pass


class LlmUnavailable(SentGraphError):
    pass


class EmptyCompletion(SentGraphError):
    pass


class MalformedJson(SentGraphError, ValueError):
    pass


class UnknownPrompt(SentGraphError, KeyError):
    """MockLlm received a prompt it has no scripted response for."""


class SchemaError(SentGraphError, ValueError):
    def __init__(self, message: str, path: str | None = None):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)
