"""Exception types raised across the package."""


class DeadcoreError(Exception):
    """Base class for all library errors."""


class NonIntegrableGrowth(DeadcoreError):
    pass


class SingularTransform(DeadcoreError):
    pass


class InvertedElement(DeadcoreError):
    pass


class NonConformingMesh(DeadcoreError):
    pass


class EmptyTarget(DeadcoreError):
    pass


class DegenerateBoundary(DeadcoreError):
    pass


class NonSPDCoefficient(DeadcoreError):
    pass


class InvalidKinetic(DeadcoreError):
    pass


class NoConvergence(DeadcoreError):
    """Nonlinear solve did not reach the requested tolerance.

    The partial result and its report are attached so callers can inspect
    how far the iteration got.
    """

    def __init__(self, message, report=None, field=None):
        super().__init__(message)
        self.report = report
        self.field = field


class UnfrozenInfinitePotential(DeadcoreError):
    pass


class SingularSystem(DeadcoreError):
    pass


class HypothesisViolated(DeadcoreError):
    pass


class EmptyRegion(DeadcoreError):
    pass


class CornerBoundary(DeadcoreError):
    pass


class InsufficientSamples(DeadcoreError):
    pass


class NoDeadCore(DeadcoreError):
    pass


class ParseError(DeadcoreError):
    pass


class ValidationError(DeadcoreError):
    pass
