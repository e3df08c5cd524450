"""Exception hierarchy. Each class carries the CLI exit code it maps to."""

from __future__ import annotations


class ContactHJBError(Exception):
    exit_code = 1


class ConfigError(ContactHJBError):
    exit_code = 2


class ExpressionError(ContactHJBError):
    exit_code = 3

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte {offset})"
        super().__init__(message)
        self.offset = offset


class ModelError(ContactHJBError):
    exit_code = 4


class RangeError(ModelError):
    exit_code = 5


class GridMismatchError(ContactHJBError):
    exit_code = 6


class SchemeError(ContactHJBError):
    exit_code = 7


class PreconditionError(ContactHJBError):
    exit_code = 8


class NotConvergedError(ContactHJBError):
    exit_code = 9


class OracleMismatchError(ContactHJBError):
    exit_code = 10


class SizeLimitError(ContactHJBError):
    exit_code = 11
