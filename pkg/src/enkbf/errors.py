"""Exception types shared across the package."""


class EnkbfError(Exception):
    """Base class for errors raised by this package."""


class ConfigError(EnkbfError):
    """A model, scheme, or experiment configuration violates its contract."""


class NumericError(EnkbfError):
    """A computation failed numerically (singular solve, divergence, non-finite state)."""
