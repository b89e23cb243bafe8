"""Exception types shared across the toolkit."""


class CpgkitError(Exception):
    """Base class for all toolkit errors."""


class ParseError(CpgkitError):
    """Malformed input data; the message names the offending field or element."""


class ValidationError(CpgkitError):
    """Structurally well-formed input that violates a domain invariant."""


class TransportError(CpgkitError):
    """A provider request failed in a way that is worth retrying."""


class ProviderError(CpgkitError):
    """An external embedding or generation provider failed after retries."""


class GenerationError(ProviderError):
    """Answer generation failed; retrieval evidence is still available.

    ``evidence_ids`` carries the ids of the retrieved context documents so
    the caller can report partial results.
    """

    def __init__(self, message: str, evidence_ids: tuple = ()):
        super().__init__(message)
        self.evidence_ids = tuple(evidence_ids)
