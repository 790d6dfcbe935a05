"""Exception types shared across the package."""


class LidannError(Exception):
    """Base class for all package errors."""


class ParseError(LidannError):
    """Malformed vector file (bad record header, truncation, mixed dims)."""


class ParameterError(LidannError, ValueError):
    """Caller supplied arguments violating an operation's preconditions."""


class DegenerateInputError(LidannError):
    """Geometry too degenerate to process (coincident points, zero variance)."""


class IndexFormatError(LidannError):
    """Index or profile file is corrupt, truncated, or has a bad magic/version."""


class RecordSizeError(IndexFormatError):
    """Per-node record does not fit the configured block size."""

    def __init__(self, message: str, required_block_size: int):
        super().__init__(message)
        self.required_block_size = required_block_size
