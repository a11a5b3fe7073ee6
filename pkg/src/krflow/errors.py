"""Exception hierarchy shared by all krflow modules."""


class KRFlowError(Exception):
    """Base class for every error raised by krflow."""


class ConfigurationError(KRFlowError, ValueError):
    """Invalid grid, configuration file or parameter value."""


class DomainError(KRFlowError, ValueError):
    """Evaluation point or argument outside the admissible domain."""


class PositivityError(KRFlowError):
    """A metric eigenvalue (F' or F'') failed to be positive."""


class BoundaryClosureError(KRFlowError):
    """The asymptotic closure at the grid ends is inconsistent with the data."""


class ConvexityError(KRFlowError):
    """Legendre transform requested on a non-convex profile."""


class NormalizationError(KRFlowError):
    """The Ricci potential could not be normalized."""


class PathError(KRFlowError):
    """An intermediate metric along a path of potentials is not positive."""


class StiffnessError(KRFlowError):
    """Time step underflow while integrating the flow."""

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


class CoverageError(KRFlowError):
    """A time series does not cover the window a monitor needs."""


class NumericalError(KRFlowError):
    """Eigensolver or root finder failure."""


class FormatError(KRFlowError, ValueError):
    """A snapshot, checkpoint or series file is malformed or too new."""
