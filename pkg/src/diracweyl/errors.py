"""Exception hierarchy shared by the toolkit."""

from __future__ import annotations


class DiracError(Exception):
    """Base class for every error raised by the toolkit.

    ``stage`` is filled in by multi-stage pipelines so callers can tell
    where a failure happened.
    """

    stage: str | None = None


class InvalidInputError(DiracError, ValueError):
    """Input rejected by validation (shape, finiteness, grid mismatch)."""


class IntegrationOverflowError(DiracError, OverflowError):
    """The propagator left the floating point range."""


class SingularityError(DiracError):
    """A matrix that must be invertible was (numerically) singular."""

    def __init__(self, message: str, index: int | None = None):
        super().__init__(message)
        self.index = index


class ContractionError(SingularityError):
    """A field that must be a strict contraction has norm >= 1."""


class NonConvergenceError(DiracError):
    """The truncation ladder did not reach the requested tolerance."""

    def __init__(self, message: str, best=None, residual: float | None = None, z=None):
        super().__init__(message)
        self.best = best
        self.residual = residual
        self.z = z


class NonExpansiveError(DiracError):
    """A Weyl value violates ||phi|| <= 1 (hard failure)."""


class InconsistentInputError(DiracError):
    """Data cannot come from a Weyl function of a locally bounded potential."""


class AdmissibilityError(DiracError):
    """The operator S is not positive definite."""

    def __init__(self, message: str, eigenvalue: float, length: float | None = None,
                 block: int | None = None):
        super().__init__(message)
        self.eigenvalue = eigenvalue
        self.length = length
        self.block = block
