"""Exception types shared across modules."""


class GeometryError(ValueError):
    """Invalid shape, obstacle placement or needle."""


class SolverError(RuntimeError):
    """Singular or ill-conditioned discrete system."""

    def __init__(self, message: str, condition: float | None = None):
        super().__init__(message if condition is None else f"{message} (condition estimate {condition:.3e})")
        self.condition = condition


class ConvergenceError(RuntimeError):
    """An iterative eigen-solver hit its iteration cap."""


class ConfigError(ValueError):
    """Experiment configuration failed schema validation."""


class EigenvalueProximityWarning(UserWarning):
    """k^2 lies within 1% of a discrete Dirichlet eigenvalue."""
