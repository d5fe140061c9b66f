"""Exception types shared across the toolkit."""
from __future__ import annotations


class CoexpressError(Exception):
    """Base class for all toolkit errors."""


class ParseError(CoexpressError):
    """Malformed input file. Carries the offending 1-based line number."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ValidationError(CoexpressError):
    """Input violates a documented precondition or invariant."""


class DegenerateRowError(CoexpressError):
    """Row has no spread (min == max), so a scale-dependent transform is undefined."""


class ZeroVarianceError(CoexpressError):
    """Correlation requested against a constant vector."""


class GraphError(CoexpressError):
    """Graph operation undefined for this input (e.g. modularity of a zero-edge graph)."""


class StageError(CoexpressError):
    """A pipeline stage failed; carries the stage name."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.__cause__ = cause
