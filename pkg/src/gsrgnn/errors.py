"""Exception types shared across the package.

Each maps to a CLI exit code: configuration/shape/format problems are
validation errors (1), verification failures are 2, resource failures are 3.
"""


class GsrError(Exception):
    exit_code = 1


class ConfigError(GsrError, ValueError):
    pass


class ShapeError(GsrError, ValueError):
    pass


class SequencingError(GsrError, RuntimeError):
    """A forward/backward cache was used out of order."""


class NumericalError(GsrError, ArithmeticError):
    """A value became NaN or infinite (for example a diverging training run)."""


class FormatError(GsrError, ValueError):
    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class VerificationError(GsrError):
    exit_code = 2


class ResourceError(GsrError, MemoryError):
    exit_code = 3

    def __init__(self, message: str, snapshot=None):
        if snapshot is not None:
            message = f"{message}; arena snapshot: {snapshot}"
        super().__init__(message)
        self.snapshot = snapshot
