"""Exception hierarchy shared by every tdbm module."""


class TdbmError(Exception):
    """Base class for all errors raised by tdbm."""


class DimensionError(TdbmError, ValueError):
    """Operand shapes do not conform."""


class InvalidArgumentError(TdbmError, ValueError):
    """An argument is outside its admissible domain."""


class CapacityError(TdbmError):
    """A model is too large for exact enumeration."""


class ConfigError(TdbmError, ValueError):
    """Invalid training or experiment configuration."""


class DataError(TdbmError):
    """A dataset or serialized file is missing, malformed or truncated."""


class InsufficientDataError(TdbmError, ValueError):
    """Not enough samples for the requested statistic."""


class NumericalError(TdbmError, ArithmeticError):
    """Non-finite values appeared during a computation."""
