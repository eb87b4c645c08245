"""Exception types shared across the harness."""

from __future__ import annotations


class FixerbenchError(Exception):
    """Base class for all harness errors."""


class ConfigurationError(FixerbenchError):
    """Invalid configuration: bad pattern file, malformed manifest field,
    missing profiler provider, out-of-range protocol value."""


class CorpusError(FixerbenchError):
    """Corpus-level failure that cannot be collected as a per-task error."""


class FixerUnavailableError(FixerbenchError):
    """The fixer endpoint produced no response after the configured retries."""


class EmptyCandidateError(FixerbenchError):
    """The fixer response contained no extractable code."""


class MeasurementError(FixerbenchError):
    """Speedup re-measurement produced no usable timing."""


class EvaluationError(FixerbenchError):
    """Run-level failure: unwritable result directory, missing backend."""
