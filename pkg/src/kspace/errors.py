"""Exception taxonomy shared across the toolkit.

Every error raised by this package derives from :class:`KspaceError` and
carries the process exit code the CLI maps it to:

* 2 -- usage / bad parameter
* 3 -- validation (format, truncation, label codes, insufficient data)
* 4 -- computation
* 5 -- I/O
"""

from __future__ import annotations


class KspaceError(Exception):
    """Base class for all toolkit errors."""

    exit_code = 4


class UsageError(KspaceError):
    """Bad CLI flags or conflicting options."""

    exit_code = 2


class ParameterError(UsageError):
    """An operation received an out-of-range or inconsistent parameter."""


class ValidationError(KspaceError):
    """Input data violates a documented invariant."""

    exit_code = 3


class FormatError(ValidationError):
    """A binary file does not start with the expected magic or layout."""


class TruncationError(ValidationError):
    """A binary file is shorter or longer than its header implies."""


class InsufficientDataError(ValidationError):
    """Too few rows/tokens for the requested operation."""


class ShapeError(ValidationError):
    """Matrix dimensions do not match between operands."""


class ComputationError(KspaceError):
    """A numeric stage failed in a way that is not an input-validation issue."""

    exit_code = 4


class StorageError(KspaceError):
    """Filesystem read/write failure."""

    exit_code = 5
