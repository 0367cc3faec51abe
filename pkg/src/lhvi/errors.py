"""Exception types raised across the package."""


class LHVIError(Exception):
    """Base class for all package errors."""


class UnknownVariable(LHVIError, KeyError):
    pass


class ArityMismatch(LHVIError, ValueError):
    pass


class DuplicateId(LHVIError, ValueError):
    pass


class InvalidEvidenceValue(LHVIError, ValueError):
    pass


class DomainMismatch(LHVIError, ValueError):
    pass


class ClusterCoverageError(LHVIError, ValueError):
    pass


class NonRefinementError(LHVIError, ValueError):
    pass


class Unsplittable(LHVIError, ValueError):
    pass


class NonFiniteIntegrand(LHVIError, ArithmeticError):
    pass


class NonFiniteGradient(LHVIError, ArithmeticError):
    pass


class DivergenceDetected(LHVIError, ArithmeticError):
    pass


class SupportMismatch(LHVIError, ValueError):
    pass


class NotGaussian(LHVIError, ValueError):
    pass


class NotPositiveDefinite(LHVIError, ValueError):
    pass


class TooLarge(LHVIError, ValueError):
    pass


class NonIntegrable(LHVIError, ArithmeticError):
    pass
