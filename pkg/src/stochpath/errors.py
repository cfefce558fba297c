"""Exception types shared across the suite."""


class StochPathError(Exception):
    """Base class for all suite-specific errors."""


class IntegrationDivergedError(StochPathError):
    """A trajectory left the finite domain; carries the last valid state."""

    def __init__(self, message, last_state=None):
        super().__init__(message)
        self.last_state = last_state


class DegenerateTrajectoryError(StochPathError):
    """Trajectory too short for the requested functional."""


class NoClassicalPathError(StochPathError):
    """Shooting failed to bracket a classical path (e.g. conjugate points)."""


class InsufficientGridError(StochPathError):
    """Action table too sparse for central differences."""


class SimulationDivergedError(StochPathError):
    """A stochastic update produced a non-finite value."""


class StabilityError(StochPathError):
    """Requested time step violates the solver accuracy bound."""

    def __init__(self, message, suggested_dt=None):
        super().__init__(message)
        self.suggested_dt = suggested_dt


class NoDiffusiveStationaryError(StochPathError):
    """Stationary density undefined for zero diffusion."""


class DomainMismatchError(StochPathError):
    """Grid and data live on incompatible domains."""


class NoPlateauError(StochPathError):
    """Effective-mass series has no acceptable constant window."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics


class PositivityDomainError(StochPathError):
    """Test function support leaks to non-positive times."""


class SemigroupViolationError(StochPathError):
    """A time shift moved support out of the positive-time half space."""


class IllConditionedCovarianceError(StochPathError):
    """Covariance solve failed or lost positivity."""


class ContinuationAmbiguousError(StochPathError):
    """Correlator is not a clean single exponential; continuation refused."""

    def __init__(self, message, chi2_dof=None):
        super().__init__(message)
        self.chi2_dof = chi2_dof


class UsageError(StochPathError):
    """Invalid configuration or command-line usage."""
