"""Exception types, grouped by how the command line reports them."""


class GrouError(Exception):
    """Base class for package errors."""


class ConfigError(GrouError):
    """Invalid configuration or arguments (exit code 2)."""


class NumericError(GrouError):
    """Numerical failure during a computation (exit code 1)."""


class NonStationaryError(NumericError):
    """The drift matrix does not admit a stationary solution."""


class IdentifiabilityError(NumericError):
    """The observed information is singular or too ill-conditioned to invert."""
