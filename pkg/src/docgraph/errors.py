"""Exception types shared across modules and mapped to CLI exit codes."""

from __future__ import annotations


class DataError(Exception):
    """Problem with input data (exit code 2 territory)."""


class MissingFile(DataError):
    pass


class MalformedAnnotation(DataError):
    pass


class VersionMismatch(DataError):
    def __init__(self, expected: str, found: str):
        super().__init__(f"expected format {expected!r}, found {found!r}")
        self.expected = expected
        self.found = found


class SchemaMismatch(DataError):
    pass


class NumericFailure(RuntimeError):
    """Training or evaluation produced a non-finite quantity (exit code 3)."""
