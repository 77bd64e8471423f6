"""Exception types shared across the package."""


class SitingError(Exception):
    """Base class for all package-specific errors."""


class GridFormatError(SitingError):
    """Raised when a grid or mask file cannot be parsed."""


class InfeasibleProblemError(SitingError):
    """Raised when a problem is provably infeasible before solving.

    Covers empty candidate sets, a missing lower water body, and volume
    targets that exceed the total storable capacity of the terrain.
    """


class IntegralityError(SitingError):
    """Raised when a solver incumbent has fractional binaries beyond tolerance."""


class NoIncumbentError(SitingError):
    """Raised when every solution attempt ends without a usable incumbent."""

    def __init__(self, message: str, trace=None):
        super().__init__(message)
        self.trace = trace or []
