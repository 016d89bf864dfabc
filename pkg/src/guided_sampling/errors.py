"""Exception hierarchy for the guided-sampling toolkit.

Everything raised on purpose derives from GuidedSamplingError so callers can
catch the whole family; validation-style errors double as ValueError.
"""

from __future__ import annotations


class GuidedSamplingError(Exception):
    """Base class for all errors raised by this package."""


class BudgetError(GuidedSamplingError, ValueError):
    """Invalid compute-budget request (e.g. more concepts than calls)."""


class QueryError(GuidedSamplingError, ValueError):
    """pass@k query outside its domain (c > n, k < 1, ...)."""


class DatasetError(GuidedSamplingError, ValueError):
    """Malformed question or dataset file."""


class TemplateError(GuidedSamplingError, ValueError):
    """Prompt template missing a required slot or failing to parse."""


class BackendUnavailable(GuidedSamplingError):
    """Transport kept failing after the retry budget was spent."""


class RequestRejected(GuidedSamplingError):
    """The remote endpoint rejected the request (4xx); retrying is pointless."""


class ScriptExhausted(GuidedSamplingError):
    """A scripted backend ran out of responses for a request."""


class ExplorationFailed(GuidedSamplingError):
    """Backend failure mid-exploration; carries the concepts found so far."""

    def __init__(self, message: str, concepts: tuple = (), calls: int = 0):
        super().__init__(message)
        self.concepts = tuple(concepts)
        self.calls = calls


class EmptyExplorationError(GuidedSamplingError):
    """Exploration finished with zero usable concepts."""

    def __init__(self, message: str, calls: int = 0):
        super().__init__(message)
        self.calls = calls


class StoreError(GuidedSamplingError):
    """I/O failure while persisting or reading samples."""


class StoreConflict(StoreError):
    """A key was re-put with a different value."""


class VerificationError(GuidedSamplingError):
    """Report requested over candidates that still carry unverified verdicts."""

    def __init__(self, message: str, offenders: tuple = ()):
        super().__init__(message)
        self.offenders = tuple(offenders)


class EmptyReportError(GuidedSamplingError):
    """No labeled candidates to aggregate."""


class ModelError(GuidedSamplingError, ValueError):
    """Synthetic probability model violates its invariants."""


class RejectedCandidateError(GuidedSamplingError, ValueError):
    """Training-record construction was fed a non-correct candidate."""


class LabelOverflowError(GuidedSamplingError, ValueError):
    """More concepts than single-letter labels a)..z) can index."""


class CorpusError(GuidedSamplingError, ValueError):
    """Training-corpus construction is impossible for this artifact/regime."""


class ConfigError(GuidedSamplingError, ValueError):
    """Invalid run configuration; collects every violation found."""

    def __init__(self, violations):
        self.violations = tuple(violations)
        super().__init__("; ".join(self.violations))
