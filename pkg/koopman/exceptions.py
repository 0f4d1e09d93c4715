"""
Exception hierarchy for the koopman services.

Every service raises a subclass of ``KoopmanError`` so that management
commands can turn failures into a ``CommandError`` in one place.
"""

from typing import Sequence


class KoopmanError(Exception):
    """Base class for all errors raised by the koopman services."""


class DimensionError(KoopmanError, ValueError):
    """Array shapes do not agree with each other or with a declared size."""


class NonFiniteError(KoopmanError, ValueError):
    """A NaN or Inf showed up where only finite values are allowed."""


class ConvergenceError(KoopmanError):
    """An iterative routine hit its iteration cap without converging."""


class RankDeficientError(KoopmanError):
    """A regressor is not full row rank and no ridge fallback was allowed."""


class InfeasibleError(KoopmanError):
    """A constraint set is empty or a pair is not stabilizable."""


class DivergenceError(KoopmanError):
    """A simulation or a training run produced non-finite values."""


class InsufficientDataError(KoopmanError):
    """Not enough samples to build the requested data matrices."""


class StageError(KoopmanError):
    """A pipeline stage failed; carries the stage name and its artifact paths."""

    def __init__(self, stage: str, message: str, paths: Sequence[str] = ()):
        self.stage = stage
        self.paths = list(paths)
        where = f" (artifacts: {', '.join(self.paths)})" if self.paths else ""
        super().__init__(f"Stage '{stage}' failed: {message}{where}")


class RankWarning(UserWarning):
    """Issued when a least-squares regressor is numerically rank deficient."""


class NotPositiveDefiniteError(KoopmanError, ValueError):
    """A weight matrix that must be positive definite is not."""


class ExcitationError(KoopmanError, ValueError):
    """An excitation signal cannot be built from the requested spec."""


class ArtifactError(KoopmanError, OSError):
    """An artifact file is missing, unreadable or has the wrong format."""
