"""Exception hierarchy shared across the package."""


class PedbankError(Exception):
    """Base class for every error raised by this package."""


class ParseError(PedbankError):
    """A file or document does not match its expected format."""


class DimensionError(PedbankError):
    """Array shapes or declared dimensions are inconsistent."""


class PreconditionError(PedbankError):
    """An operation was called with inputs that violate its contract."""


class NumericalError(PedbankError):
    """A computation produced non-finite values."""
