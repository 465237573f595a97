"""Exception hierarchy shared across the toolkit.

``PolypersonaError`` is the base for every domain error so callers (and the
CLI) can distinguish "this input is wrong" (exit 1) from genuine bugs.
"""

from __future__ import annotations


class PolypersonaError(Exception):
    """Base class for all domain errors raised by this package."""


class ParseError(PolypersonaError):
    """A file could not be parsed. Carries the offending line when known."""

    def __init__(self, message: str, *, path: str | None = None, line: int | None = None):
        self.path = path
        self.line = line
        loc = ""
        if path is not None:
            loc = f" ({path}" + (f":{line}" if line is not None else "") + ")"
        super().__init__(message + loc)


class SchemaError(PolypersonaError):
    """Structurally valid input that violates the documented schema."""


class DuplicateIdError(SchemaError):
    """Two entities share an id that must be unique."""


class EmptyInputError(PolypersonaError):
    """An operation that requires a nonempty input received an empty one."""


class EmptyFileError(ParseError):
    """An input file contained no usable records."""


class EmptyPoolError(PolypersonaError):
    """A sampler was asked to draw from a pool with no questions."""


class EmptyDatasetError(EmptyInputError):
    """Splitting requires at least one record."""


class InsufficientPersonasError(PolypersonaError):
    """A without-replacement draw asked for more personas than the store holds."""


class MissingDomainError(PolypersonaError):
    """A per-domain report was requested for a domain with no rows."""


class IoError(PolypersonaError):
    """Wrapper for filesystem failures on dataset reads/writes."""


class EndpointError(PolypersonaError):
    """Terminal HTTP failure from a generation endpoint."""

    def __init__(self, message: str, *, status: int | None = None, attempts: int = 1):
        self.status = status
        self.attempts = attempts
        super().__init__(message)


class AuthError(EndpointError):
    """401/403 from the endpoint; never retried."""


class TimeoutExhaustedError(EndpointError):
    """Every retry of a request timed out."""


class ProviderError(PolypersonaError):
    """An embedding provider failed to produce vectors."""


class ConfigError(PolypersonaError):
    """A run configuration is malformed or references missing files."""
