"""Exception hierarchy.

ValidationError covers bad inputs and malformed files (CLI exit code 2);
everything else raised by this package derives from NfError (exit code 1).
"""


class NfError(Exception):
    pass


class ValidationError(NfError, ValueError):
    pass


class FormatError(ValidationError):
    """Malformed or truncated file content."""


class EmptySurfaceError(NfError):
    """The field has no surface crossing inside the extraction volume."""


class RenderError(NfError):
    """Non-finite field output encountered while rendering."""


class DivergenceError(NfError):
    """Training loss became non-finite."""
