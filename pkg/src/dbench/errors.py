"""Typed errors raised across the pipeline.

Every failure mode a stage can surface to callers is a subclass of
:class:`DbenchError`, so "returns a value or a typed error" is checkable
with a single except clause.
"""

from __future__ import annotations


class DbenchError(Exception):
    """Base class for every error raised by this package."""


# --- model gateway ---------------------------------------------------------


class UnknownModel(DbenchError):
    """A model id was used that is not present in the registry."""


class TransientTransportError(DbenchError):
    """Retryable transport failure (connection reset, timeout, 429/5xx)."""


class TransportExhausted(DbenchError):
    """All retries were spent on transient transport failures."""


class ProviderRefusal(DbenchError):
    """Non-retryable provider error (bad request, auth, malformed reply)."""


class AmbiguousMatcher(DbenchError):
    """Two or more mock script matchers claim the same request."""


class UnmatchedRequest(DbenchError):
    """A scripted mock received a request no matcher claims and no default is set."""


# --- corpus acquisition ----------------------------------------------------


class SourceUnreachable(DbenchError):
    """An abstract source (directory or API) cannot be read."""


class MalformedUpstreamRecord(DbenchError):
    """One upstream record cannot be normalized; it is skipped and logged."""


class MissingReleaseDate(DbenchError):
    """A model under evaluation has no registered release date."""


class SnapshotExists(DbenchError):
    """A corpus snapshot with this id already exists; no silent overwrite."""


# --- structured-output parsing --------------------------------------------


class NotJson(DbenchError):
    """No JSON object could be extracted from model output."""


class SchemaViolation(DbenchError):
    """Extracted JSON does not satisfy the required output shape."""


class ExtractionExhausted(DbenchError):
    """All corrective retries produced unusable extraction output."""


# --- QA filter -------------------------------------------------------------


class MissingAbstract(DbenchError):
    """A centrality batch item has no resolvable source abstract."""


class UnparseableTable(DbenchError):
    """Judge output contains no usable score-table rows."""


class _RowError(DbenchError):
    def __init__(self, row_id: str, message: str | None = None):
        self.row_id = row_id
        super().__init__(message or f"{type(self).__name__}: {row_id!r}")


class MissingRow(_RowError):
    """An expected id is absent from the judge's score table."""


class DuplicateRow(_RowError):
    """An expected id appears more than once in the judge's score table."""


class ScoreOutOfRange(_RowError):
    """A score cell is not an integer in 1..5."""


class JudgeExhausted(DbenchError):
    """Judge retries spent; affected items are rejected with a recorded cause."""


# --- judge evaluation ------------------------------------------------------


class MissingReason(DbenchError):
    """A judge verdict lacks a non-empty reason."""


class MissingCandidate(DbenchError):
    """No candidate answer exists for a retained benchmark item."""


class EmptyInput(DbenchError):
    """An aggregation was requested over zero records."""


class ArtifactExists(DbenchError):
    """An append-only artifact already holds records; refuse to overwrite."""


# --- alignment validation --------------------------------------------------


class InsufficientAnnotators(DbenchError):
    """An annotation matrix needs exactly one llm and at least two humans."""


class AllItemsMissing(DbenchError):
    """An annotator shares no scorable items with the rest of the matrix."""


class CoverageGap(DbenchError):
    """A sampled item lacks the scores required for a dimension."""

    def __init__(self, qa_id: str, dimension: str, detail: str = "human scores"):
        self.qa_id = qa_id
        self.dimension = dimension
        super().__init__(f"{qa_id!r} lacks {detail} for dimension {dimension!r}")


# --- solvers ----------------------------------------------------------------


class IndexUnavailable(DbenchError):
    """The literature search index is not loaded."""


class UnparseableAction(DbenchError):
    """An agent reply contains neither a valid action nor a final answer."""


# --- pipeline ---------------------------------------------------------------


class ConfigError(DbenchError):
    """The pipeline configuration is invalid."""


class MissingStage(DbenchError):
    """A required upstream stage has not produced its artifacts."""


class StaleUpstream(DbenchError):
    """An upstream stage ran against inputs that have since changed."""


class SnapshotLocked(DbenchError):
    """Another process holds this snapshot's writer lock."""
