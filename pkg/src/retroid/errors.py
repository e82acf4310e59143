"""Exception types shared across the pipeline."""


class RetroidError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(RetroidError):
    """Input data violates a documented precondition or invariant."""


class ConfigurationError(RetroidError):
    """A configuration value is out of range or names an unknown component."""


class OrientationUndefined(RetroidError):
    """Head and abdomen centers coincide; no orientation can be assigned."""


class CropRejected(RetroidError):
    """A detection cannot produce a usable crop (degenerate body box)."""


class LeakageError(RetroidError):
    """Train/test segregation failed; carries the offending report."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report
