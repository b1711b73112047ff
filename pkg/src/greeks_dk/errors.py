"""Exception types shared across the package."""


class GreeksDkError(Exception):
    """Base class for all package-specific failures."""


class ConfigurationError(GreeksDkError):
    """A run configuration or capability requirement is invalid."""


class KernelConstructionError(GreeksDkError):
    """A kernel could not be built (e.g. singular moment system)."""


class OrderVerificationError(GreeksDkError):
    """Kernel order could not be established up to the requested degree."""


class NumericsError(GreeksDkError):
    """A quadrature or finite-difference computation failed to stabilize."""


class DomainError(GreeksDkError, ValueError):
    """An input lies outside the mathematical domain of an operation."""


class SimulationError(GreeksDkError):
    """Path simulation produced an invalid state.

    Carries the time-step index at which the problem appeared.
    """

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


class EstimationError(GreeksDkError):
    """An estimator could not produce a usable result."""


class DegeneratePlanError(GreeksDkError):
    """Bandwidth planning is degenerate (e.g. vanishing bias constant)."""
