"""Exception hierarchy shared by every motok module.

Each class carries the process exit code the CLI maps it to.
"""


class MotokError(Exception):
    exit_code = 1


class UsageError(MotokError, ValueError):
    """Caller violated a documented precondition."""

    exit_code = 1


class DimensionError(UsageError):
    """Tensor shapes do not satisfy an operator's contract."""


class FormatError(MotokError):
    """A binary or text file could not be decoded.

    ``offset`` is the byte position at which decoding failed, when known.
    """

    exit_code = 2

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class NumericError(MotokError, ArithmeticError):
    """Non-finite values, divergence, or a failed numerical check."""

    exit_code = 3
