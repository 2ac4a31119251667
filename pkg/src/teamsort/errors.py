"""Exception hierarchy shared by all modules."""


class TeamsortError(Exception):
    """Base class for package errors."""


class DomainError(TeamsortError, ValueError):
    """Argument outside the domain of a function."""


class DistributionError(TeamsortError, ValueError):
    """Invalid distribution specification."""


class InvalidTechnologyError(TeamsortError, ValueError):
    """Technology coefficients violate the submodularity condition."""


class CapacityError(TeamsortError):
    """Problem too large for exhaustive enumeration."""


class SolverError(TeamsortError):
    """Root finding or integration failed.

    Parameters
    ----------
    message : str
    diagnostics : dict, optional
        Data useful for post-mortem, e.g. the scanned residual curve.
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class SingularWeightError(SolverError):
    """Inference weight vanished inside the integration range."""


class ShapeError(TeamsortError, ValueError):
    """Earnings profile is not decreasing and convex."""


class ConfigurationError(TeamsortError, ValueError):
    """Inconsistent run configuration (e.g. nonpositive earnings)."""


class StateError(TeamsortError):
    """Object used before it was fully set up."""
