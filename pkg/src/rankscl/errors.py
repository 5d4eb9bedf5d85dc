"""Exception types shared across the package."""


class RanksclError(Exception):
    """Base class for all package errors."""


class ParseError(RanksclError):
    """A file could not be parsed; message carries the offending line number."""


class ValidationError(RanksclError):
    """Input data violates a structural contract."""


class ConfigError(RanksclError):
    """A configuration value is out of its allowed range."""


class NumericError(RanksclError):
    """A non-finite value appeared where one is not allowed."""
