"""Exception types shared across the package."""


class DialogevError(Exception):
    """Base class for errors raised by this package."""


class ConfigError(DialogevError):
    """A configuration value is invalid or infeasible."""


class IngestError(DialogevError):
    """The raw input stream is corrupt beyond per-record recovery."""


class TransportError(DialogevError):
    """A remote embedding service request failed (retryable)."""


class RetrievalError(DialogevError):
    """Retrieval failed for a specific query instance."""


class AlignmentError(DialogevError):
    """Hypotheses and references do not line up by id."""
