"""Exception hierarchy.

The CLI maps :class:`ValidationError` to exit code 2 and ``OSError`` to
exit code 3.
"""


class EgogenError(Exception):
    """Base class for all package errors."""


class ValidationError(EgogenError, ValueError):
    """Input violates a data-model invariant."""


class FormatError(ValidationError):
    """A file on disk is malformed, truncated or inconsistent."""


class FrameMismatchError(ValidationError):
    """A point cloud carries the wrong frame tag for the requested operation."""
