"""Exception types shared across the package."""


class DomainError(ValueError):
    """An input lies outside the domain of a formula or violates a type invariant."""


class ConfigError(ValueError):
    """A run configuration could not be parsed or validated."""


class NumericalInstabilityError(ArithmeticError):
    """The time integrator produced energy growth in a passive system."""

    def __init__(self, message, dt=None):
        super().__init__(message)
        self.dt = dt
