"""Exception types shared across the package."""


class NoDataError(RuntimeError):
    """An operation that needs at least one sample received none."""


class ShapeError(ValueError):
    """An array, image batch, or network input violates a shape or role contract."""


class ConfigError(ValueError):
    """A configuration value is missing, unknown, or out of range."""


class StateError(RuntimeError):
    """Training state or checkpoint content is incompatible with the request."""


class NumericError(ArithmeticError):
    """A numeric result left its valid domain (non-finite input, non-PSD matrix)."""
