"""Exception types raised across the toolkit."""

from __future__ import annotations


class PyekiError(Exception):
    """Base class for all toolkit errors."""


class DegenerateEnsembleError(PyekiError):
    """Fewer than two usable particles; ensemble statistics are undefined."""


class IllConditionedSystemError(PyekiError):
    """A symmetric factorisation failed; carries a condition estimate."""

    def __init__(self, message: str, condition_estimate: float | None = None):
        super().__init__(message)
        self.condition_estimate = condition_estimate


class SolverError(PyekiError):
    """A forward-model solve failed (non-convergence or non-finite iterate)."""


class RunAbortedError(PyekiError):
    """An inversion could not proceed (e.g. every particle failed).

    Carries the partial result accumulated before the abort, so callers can
    persist the manifest for post-mortem inspection.
    """

    def __init__(self, message: str, result=None):
        super().__init__(message)
        self.result = result


class ConfigError(PyekiError):
    """A configuration file failed to parse or validate."""


class StorageError(PyekiError):
    """A persisted run directory is missing files or malformed."""
