"""Exception hierarchy shared across the package."""


class CTMFlowError(Exception):
    """Base class for all package errors."""


# network construction / queries
class NetworkError(CTMFlowError):
    pass


class UnreachableCell(NetworkError):
    pass


class BadRowSum(NetworkError):
    pass


class InconsistentEdge(NetworkError):
    pass


class UnknownCell(NetworkError, KeyError):
    pass


class NonSquare(NetworkError, ValueError):
    pass


class BadDimensions(NetworkError, ValueError):
    pass


# cell dynamics / per-cycle data
class NegativeVolume(CTMFlowError, ValueError):
    pass


class NegativeResultingVolume(CTMFlowError):
    """Raised when a realization would drive some cell volume below zero.

    The offending volume vector is kept on ``volumes`` so callers can choose
    their own clamping policy.
    """

    def __init__(self, message, volumes=None):
        super().__init__(message)
        self.volumes = volumes


class InfeasibleBounds(CTMFlowError):
    pass


class LengthMismatch(CTMFlowError, ValueError):
    pass


# solvers
class SingularG(CTMFlowError):
    pass


class Infeasible(CTMFlowError):
    pass


class DegenerateNorms(CTMFlowError):
    pass


class MaxIterExceeded(CTMFlowError):
    """Iteration cap hit; ``report`` carries the last iterate."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


# final-value computation
class ObserveAfterTermination(CTMFlowError):
    pass


class NotDefectiveYet(CTMFlowError):
    pass


class DegenerateDenominator(CTMFlowError, ZeroDivisionError):
    pass


class NoConvergenceDetected(CTMFlowError):
    pass


# distributed protocol
class MissingNeighborValue(CTMFlowError, KeyError):
    pass


class ZetaNotFinalized(CTMFlowError):
    pass


class ProtocolViolation(CTMFlowError):
    pass


class NonConvergence(CTMFlowError):
    pass


# harness
class ConfigError(CTMFlowError, ValueError):
    pass
