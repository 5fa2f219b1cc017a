"""Exception types shared across the library.

The CLI maps these onto exit codes, so keep the hierarchy flat and the
messages single-line.
"""


class ModalAlignError(Exception):
    """Base class for all library errors."""


class ShapeError(ModalAlignError, ValueError):
    """Operands have incompatible or invalid shapes."""


class DegenerateBatchError(ModalAlignError, ValueError):
    """A batch is too small for the requested statistic (covariance needs N >= 2)."""


class NotPSDError(ModalAlignError, ValueError):
    """A matrix required to be positive semidefinite is not."""


class ContractError(ModalAlignError, ValueError):
    """An input violates a documented precondition."""


class SpecParseError(ModalAlignError, ValueError):
    """An alignment directive string failed to parse."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} at position {position}")
        self.position = position


class DataError(ModalAlignError, ValueError):
    """A dataset file or record is malformed."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ConfigError(ModalAlignError, ValueError):
    """A run configuration is invalid."""


class NumericError(ModalAlignError, RuntimeError):
    """Non-finite values appeared where finite arithmetic is required."""
