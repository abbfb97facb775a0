"""Exception taxonomy shared across the package.

Errors fall into three tiers: configuration problems (caught before any work
starts), per-item problems (logged, the item is skipped, the run continues),
and hard faults (the current stage cannot proceed).
"""

from __future__ import annotations


class DocbenchError(Exception):
    """Base class for all package-specific errors."""


class ConfigInvalid(DocbenchError):
    """Run configuration failed validation before any work started."""


class StageInputMissing(DocbenchError):
    """A pipeline stage was asked to run without its input files."""


# --- providers ---------------------------------------------------------------


class TransportError(DocbenchError):
    """Endpoint unreachable or returned a retryable failure after all retries."""


class ProviderRefusal(DocbenchError):
    """Backend rejected the request with a non-retryable status."""


class DimensionMismatch(DocbenchError):
    """Embedding backend returned vectors of inconsistent lengths."""


class TraceMiss(DocbenchError):
    """Replay required a call that is absent from the recorded trace."""

    def __init__(self, message: str, fingerprint: str, stage: str | None = None):
        super().__init__(message)
        self.fingerprint = fingerprint
        self.stage = stage


# --- ingestion ---------------------------------------------------------------


class UndecodableBytes(DocbenchError):
    """Document bytes are not valid UTF-8."""


class EmptyAfterNormalization(DocbenchError):
    """Normalization produced an empty document; the document is rejected."""


class DuplicateDocId(DocbenchError):
    """Two corpus entries share a doc_id."""


class MissingFile(DocbenchError):
    """A corpus manifest entry points at a file that does not exist."""


# --- chunking ----------------------------------------------------------------


class ZeroVector(DocbenchError):
    """Cosine similarity is undefined for a zero-norm vector."""


class InsufficientChunks(DocbenchError):
    """A document has fewer chunks than the minimum hop count."""


# --- summarization / judging -------------------------------------------------


class MissingTag(DocbenchError):
    """No extractable tagged block in a model response."""


class EmptyVerdictSet(DocbenchError):
    """Consensus requested over zero verdicts."""


# --- filtering ---------------------------------------------------------------


class EmptyCitation(DocbenchError):
    """Citation text is empty (possibly after normalization)."""


class EmptySource(DocbenchError):
    """Source text is empty (possibly after normalization)."""


# --- analytics ---------------------------------------------------------------


class TooFewQuestions(DocbenchError):
    """Metric needs at least two questions."""


class TooFewModels(DocbenchError):
    """Cross-model normalization needs at least two models."""


class DegenerateVariance(DocbenchError):
    """Correlation is undefined when either input has zero variance."""


class UndefinedAgreement(DocbenchError):
    """Chance-corrected agreement is undefined because expected agreement is 1."""
