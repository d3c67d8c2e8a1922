"""Exception and warning types raised across blochlab."""

from __future__ import annotations


class BlochLabError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(BlochLabError):
    pass


# lattice / potential

class DivisibilityViolation(BlochLabError):
    """A period does not divide its successor; ``level`` and ``axis`` are 1-based."""

    def __init__(self, level: int, axis: int, message: str | None = None):
        self.level = level
        self.axis = axis
        super().__init__(message or f"period {level} does not divide period {level + 1} along axis {axis}")


class PeriodOverflow(BlochLabError):
    pass


class ShapeMismatch(BlochLabError):
    pass


class NotRealizable(BlochLabError):
    pass


class StageOutOfRange(BlochLabError):
    pass


class DimensionMismatch(BlochLabError):
    pass


# spectral

class NotHermitian(BlochLabError):
    pass


class ConvergenceFailure(BlochLabError):
    pass


class NotNormalized(BlochLabError):
    pass


class PreconditionViolated(BlochLabError):
    pass


class DegenerateEigenvalue(BlochLabError):
    pass


class IllConditioned(BlochLabError):
    pass


# certification

class HypothesisViolation(BlochLabError):
    pass


class CertificateFailure(BlochLabError):
    pass


# hierarchy / measures

class CosetMismatch(BlochLabError):
    pass


class AmbiguousMatch(BlochLabError):
    pass


class NoCandidate(BlochLabError):
    pass


class ChainBroken(BlochLabError):
    pass


class GridMismatch(BlochLabError):
    pass


class BinRangeError(BlochLabError):
    pass


class MissingCertificate(BlochLabError):
    pass


class TangencyWarning(UserWarning):
    """A band touched the target energy without crossing it; root counts are lower bounds."""


class UnderflowWarning(UserWarning):
    pass
