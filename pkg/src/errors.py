class ArmError(Exception):
    """Base class for every error raised by this package."""


class ArgumentError(ArmError, ValueError):
    pass


class DimensionError(ArgumentError):
    pass


class InsufficientBatchError(ArgumentError):
    pass


class StratificationError(ArgumentError):
    pass


class SchemaError(ArmError):
    """CSV header or row does not match the dataset schema."""

    def __init__(self, message: str, line: int = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class ConfigError(ArmError):
    """Invalid or unknown configuration key."""

    def __init__(self, message: str, key: str = None):
        super().__init__(message if key is None else f"{key}: {message}")
        self.key = key


class NumericalError(ArmError, ArithmeticError):
    pass
