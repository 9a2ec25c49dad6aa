"""Exception types raised by the filtering and smoothing routines."""


class CondSmoothError(Exception):
    """Base class for all package errors."""


class ConfigError(CondSmoothError, ValueError):
    """Invalid model, filter, smoother or experiment configuration."""


class NumericalError(CondSmoothError, ArithmeticError):
    """Base class for numerical failures (CLI exit code 3)."""


class SimulationDiverged(NumericalError):
    """A simulated state became non-finite."""

    def __init__(self, time, particle=None, message=None):
        self.time = time
        self.particle = particle
        if message is None:
            message = f"non-finite state at t={time!r}"
            if particle is not None:
                message += f" (particle {particle})"
        super().__init__(message)


class PrecisionUnavailable(NumericalError):
    """The inverse diffusion covariance is needed but cannot be applied."""


class DegeneratePrecision(NumericalError):
    """An empirical precision was requested from all-zero samples."""


class DegenerateBatch(NumericalError):
    """Every Girsanov weight in a bridge batch is zero (log weight -inf)."""


class FilterDegenerate(NumericalError):
    """Every particle has zero likelihood for an observation."""

    def __init__(self, obs_index, message=None):
        self.obs_index = obs_index
        super().__init__(message or f"all particle likelihoods are zero at observation {obs_index}")


class SmootherFailed(NumericalError):
    """No usable pair remained in a smoothing window, or some windows failed."""

    def __init__(self, message, estimates=None, failures=None):
        self.estimates = estimates
        self.failures = failures or []
        super().__init__(message)


class MissingHistory(CondSmoothError, LookupError):
    """The filter history does not hold what a smoother needs."""
