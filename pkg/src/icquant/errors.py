"""Exception hierarchy shared by all icquant modules."""

from __future__ import annotations


class ICQuantError(Exception):
    """Base class for every error raised by icquant."""


class ValidationError(ICQuantError, ValueError):
    """Caller supplied arguments outside an operation's domain."""


class CorruptionError(ICQuantError):
    """Encoded data is internally inconsistent.

    ``row`` is filled in by the container loader when the failure is
    attributable to a single row.
    """

    def __init__(self, message: str, row: int | None = None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class ParseError(CorruptionError):
    """A binary file failed structural validation.

    Attributes:
        field: name of the header or section field that failed.
        offset: byte offset in the input at which the field starts.
    """

    def __init__(self, message: str, field: str, offset: int, row: int | None = None):
        self.field = field
        self.offset = offset
        super().__init__(f"{message} (field={field!r}, offset={offset})", row=row)


class ChecksumError(ParseError):
    """Payload parsed cleanly but its CRC32 does not match."""
