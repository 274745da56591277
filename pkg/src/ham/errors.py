"""Exception types shared across the package."""


class HamError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(HamError, ValueError):
    """A tensor or parameter has the wrong shape or width."""


class CapacityError(HamError, ValueError):
    """An input sequence does not fit into the configured memory."""


class UsageError(HamError, RuntimeError):
    """An operation was called in a way its contract forbids."""


class NumericsError(HamError, ArithmeticError):
    """A non-finite value showed up where finite numbers are required."""


class ConfigError(HamError, ValueError):
    """A configuration value or combination of values is invalid."""
