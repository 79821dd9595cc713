"""Exception types raised by hiwa."""


class HiwaError(Exception):
    """Base class for all hiwa errors."""


class DimensionError(HiwaError, ValueError):
    """Array shapes are incompatible."""


class InputError(HiwaError, ValueError):
    """Data passed to the solver or CLI is unusable (empty, non-finite, ...)."""


class NumericalError(HiwaError, ArithmeticError):
    """A linear-algebra routine failed, usually on non-finite input."""


class UnsupportedConfigurationError(HiwaError, ValueError):
    """A requested combination of parameters has no implemented construction."""
