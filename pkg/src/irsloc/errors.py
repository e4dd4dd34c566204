"""Exception hierarchy shared across the package.

Everything raised on a per-trial basis derives from :class:`PipelineError`,
so the Monte-Carlo harness can catch one base class and record the trial as
failed without masking programming errors.
"""


class IrslocError(Exception):
    """Base class for all package errors."""


class ConfigError(IrslocError, ValueError):
    """A configuration value violates an invariant."""


class PipelineError(IrslocError):
    """A recoverable failure inside a single simulation trial."""


class CongestedSceneError(PipelineError):
    """Scenario sampling could not find a collision-free target layout."""


class DelaySpreadError(PipelineError):
    """A propagation path maps to a delay bin beyond the configured tap count."""


class SolverConvergenceError(PipelineError):
    """A sparse solver stopped before reaching its optimality tolerance."""

    def __init__(self, message: str, gap: float):
        super().__init__(f"{message} (optimality gap {gap:.3e})")
        self.gap = gap


class InconsistentDetectionError(PipelineError):
    """The two base stations detected different numbers of ranges."""


class NoConsistentAssociationError(PipelineError):
    """No data association passed the dual-estimate consistency test."""


class LocalizationError(PipelineError):
    """Gauss-Newton failed to produce a finite position for some target."""
