"""Exception types shared across the package."""


class BoxalError(Exception):
    """Base class for all package errors."""


class ValidationError(BoxalError, ValueError):
    """A value violates a documented invariant."""


class FormatError(BoxalError, ValueError):
    """A file could not be parsed; message carries the location."""


class AdapterError(BoxalError, RuntimeError):
    """The detector adapter failed to fulfil a request."""
