"""Exception types raised by the numerical pipeline."""

from __future__ import annotations


class FinfocalError(Exception):
    """Base class for all errors raised by finfocal."""


class NumericFailure(FinfocalError):
    """Base class for failures of a numerical routine (CLI exit code 3)."""


class ScenarioError(FinfocalError):
    """Scenario file does not validate (CLI exit code 2)."""


class ZeroVector(FinfocalError):
    pass


class NotPositiveDefinite(NumericFailure):
    pass


class NewtonDivergence(NumericFailure):
    pass


class StepUnderflow(NumericFailure):
    pass


class ConstraintDrift(NumericFailure):
    pass


class InsufficientSamples(FinfocalError):
    pass


class DegenerateTangent(NumericFailure):
    pass


class PathMismatch(FinfocalError):
    pass


class NotInKernel(FinfocalError):
    pass


class UnresolvedZeroCluster(NumericFailure):
    pass


class EndpointIsFocal(FinfocalError):
    pass


class HorizonTooSmall(FinfocalError):
    pass


class NotRegular(FinfocalError):
    pass


class InsufficientNeighbors(FinfocalError):
    pass


class WitnessNotFound(NumericFailure):
    pass


class NoConvergentFoot(NumericFailure):
    pass


class OracleFailure(NumericFailure):
    pass


class OutOfBox(FinfocalError):
    pass


class MeshTooCoarse(NumericFailure):
    pass
