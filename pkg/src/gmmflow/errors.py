"""Exception types shared across the package."""


class GmmflowError(Exception):
    """Base class for all package-specific failures."""


class ConfigError(GmmflowError):
    """Invalid configuration or arguments."""


class JacobiConvergenceError(GmmflowError):
    """Eigensolver did not reach the off-diagonal tolerance within the sweep cap."""


class NonFiniteStateError(GmmflowError):
    """An integrator state became NaN/Inf.

    Carries the step index and, for batched solves, the trajectory index.
    """

    def __init__(self, message, step=None, trajectory=None):
        super().__init__(message)
        self.step = step
        self.trajectory = trajectory


class DatasetFormatError(GmmflowError):
    """Corrupt, truncated, or incompatible dataset file."""
