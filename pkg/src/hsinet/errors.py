"""Exception types shared across the package."""


class HsinetError(Exception):
    """Base class for all package errors."""


class ConfigError(HsinetError, ValueError):
    """Invalid configuration value, rejected before any heavy work."""


class ShapeError(HsinetError, ValueError):
    """Tensor dimensions incompatible with the requested operation."""


class DataError(HsinetError, ValueError):
    """Dataset content violates an invariant (empty class, bad labels, ...)."""


class LoadError(HsinetError, ValueError):
    """A container file could not be parsed; carries the byte offset."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class NumericError(HsinetError, ArithmeticError):
    """Non-finite values appeared where finite math was required."""
