"""Exception types shared across the package.

The CLI maps these onto exit codes: usage errors -> 1, data errors -> 2,
numeric failures -> 3.
"""


class DomainError(ValueError):
    """An input lies outside the domain of a geometric operation."""


class DataError(ValueError):
    """Malformed or inconsistent input data."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class NumericError(FloatingPointError):
    """Non-finite values appeared during a computation."""
