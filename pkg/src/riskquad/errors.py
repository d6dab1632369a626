"""Exception types shared across the package."""


class NumericalError(RuntimeError):
    """A solver or estimator failed to reach its accuracy contract.

    Carries the final residual (when meaningful) so callers can report it.
    """

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class ConfigError(ValueError):
    """A run configuration is malformed or contains unknown keys."""
