"""Exception types shared across the package.

The CLI maps these onto its exit-code contract: invalid inputs and bad
flags/config are usage errors (exit 1), malformed or missing data files are
data errors (exit 2), and non-finite numerics are numeric failures (exit 3).
"""


class EmorankError(Exception):
    """Base class for all package errors."""


class InvalidInputError(EmorankError, ValueError):
    """An argument violates an operation's preconditions."""


class DataFormatError(EmorankError):
    """A file on disk is malformed; message carries location details."""

    def __init__(self, message: str, *, path: str | None = None,
                 offset: int | None = None, row: int | None = None):
        parts = [message]
        if path is not None:
            parts.append(f"path={path}")
        if offset is not None:
            parts.append(f"byte_offset={offset}")
        if row is not None:
            parts.append(f"row={row}")
        super().__init__("; ".join(parts))
        self.path = path
        self.offset = offset
        self.row = row


class ModelVersionError(DataFormatError):
    """A model file carries an unknown magic string."""


class NumericError(EmorankError):
    """A computation produced a non-finite value."""
