"""Exception types raised across the toolkit."""


class MultipolarError(Exception):
    """Base class; the CLI maps subclasses to structured error objects."""

    exit_code = 1


class CriticalMass(MultipolarError, ValueError):
    pass


class NonPositiveMass(MultipolarError, ValueError):
    pass


class MassOutOfClass(MultipolarError, ValueError):
    pass


class AtPole(MultipolarError, ValueError):
    pass


class DomainError(MultipolarError, ValueError):
    pass


class TauOutOfRange(MultipolarError, ValueError):
    pass


class DegenerateProfile(MultipolarError, ValueError):
    pass


class IdentityMismatch(MultipolarError, ValueError):
    pass


class StepFailure(MultipolarError, RuntimeError):
    pass


class SolverFailure(MultipolarError, RuntimeError):
    pass


class NoConvergence(MultipolarError, RuntimeError):
    pass


class TailTooHeavy(MultipolarError, ValueError):
    pass


class NoSeparationFound(MultipolarError, RuntimeError):
    pass


class NoRadiusFound(MultipolarError, RuntimeError):
    pass


class MeshTooCoarse(MultipolarError, ValueError):
    pass


class MonotonicityViolation(MultipolarError, RuntimeError):
    pass


class SupportOutsideMesh(MultipolarError, ValueError):
    pass


class BallOutsideMesh(MultipolarError, ValueError):
    pass


class QuadratureFailure(MultipolarError, RuntimeError):
    pass


class NoSignChange(MultipolarError, ValueError):
    pass


class UsageError(MultipolarError):
    exit_code = 2
