"""Error types shared across the package.

The CLI maps these onto its exit codes: data/format problems exit 2,
remote-service problems exit 3, usage problems (bad flags) exit 1.
"""

from __future__ import annotations


class LatticeFormatError(ValueError):
    """A lattice, vocabulary, table, or model file failed to parse.

    Carries the 1-based line number of the offending line when known.
    """

    def __init__(self, message: str, line_number: int | None = None):
        self.line_number = line_number
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)


class ResponseParseError(ValueError):
    """A remote model's enumerated response could not be parsed."""


class RemoteServiceError(RuntimeError):
    """A remote LM call failed after exhausting its retry budget."""

    def __init__(self, message: str, status_code: int | None = None, attempts: int = 1):
        self.status_code = status_code
        self.attempts = attempts
        super().__init__(message)
