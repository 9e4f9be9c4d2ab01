"""Shared exception types."""


class NonFiniteError(ValueError):
    """A value that must be finite contains NaN or Inf."""


class DivergenceError(RuntimeError):
    """An iteration produced non-finite values or runaway step norms.

    Carries the partial ``trace`` accumulated before the failure, when one exists.
    """

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class ConfigError(ValueError):
    """Invalid run configuration; ``field`` names the offending entry."""

    def __init__(self, field, message):
        super().__init__(f"config error at '{field}': {message}")
        self.field = field
