"""Home of the `HirexError` hierarchy.

Every error the package raises on purpose derives from `HirexError`. The CLI maps the
three branches to exit codes: `UsageError` exits with 1, `DataError` with 2 and
`NumericalError` with 3.
"""

from typing import Optional


class HirexError(Exception):
    """Base class for all hirex errors."""

    exit_code = 1


class UsageError(HirexError):
    """Raised for invalid command lines, config keys and conflicting flags."""

    exit_code = 1


class DataError(HirexError):
    """Raised when input data cannot be used."""

    exit_code = 2


class MalformedLineError(DataError):
    """Raised when a line of a data file does not parse."""

    def __init__(self, path: str, line_number: int, line: str):
        """Initialize the error.

        Args:
            path: File containing the line.
            line_number: 1-based line number.
            line: The offending line.
        """
        self.path = path
        self.line_number = line_number
        super().__init__(f"{path}:{line_number}: malformed line {line!r}")


class UnknownEntityError(DataError):
    """Raised when an entity is referenced but missing from the vocabulary."""

    pass


class EmptyGraphError(DataError):
    """Raised when a graph would contain no triplets."""

    def __init__(self, message: str = "empty graph"):
        """Initialize the error."""
        super().__init__(message)


class InsufficientTripletsError(DataError):
    """Raised when a relation has too few triplets to build a task."""

    pass


class InfeasibleSpecError(DataError):
    """Raised when a synthetic benchmark cannot satisfy its spec."""

    pass


class CheckpointError(DataError):
    """Raised for missing, corrupt or mismatched checkpoints."""

    pass


class NumericalError(HirexError):
    """Raised when a non-finite value appears in a computation."""

    exit_code = 3

    def __init__(self, message: str, *, op: Optional[str] = None):
        """Initialize the error.

        Args:
            message: Error message.
            op: Name of the operation that produced the value, if known.
        """
        self.op = op
        super().__init__(message)


class TrainingDivergedError(NumericalError):
    """Raised when the training loss becomes non-finite."""

    def __init__(self, step: int, cause: Optional[BaseException] = None):
        """Initialize the error.

        Args:
            step: Outer step at which training diverged.
            cause: The underlying error.
        """
        self.step = step
        detail = f": {cause}" if cause is not None else ""
        super().__init__(
            f"training diverged at step {step}{detail}",
            op=getattr(cause, "op", None),
        )


__all__ = (
    "HirexError",
    "UsageError",
    "DataError",
    "MalformedLineError",
    "UnknownEntityError",
    "EmptyGraphError",
    "InsufficientTripletsError",
    "InfeasibleSpecError",
    "CheckpointError",
    "NumericalError",
    "TrainingDivergedError",
)
