"""retroid: markerless re-identification and retro-identification toolkit."""

__version__ = "0.1.0"

from .errors import (  # noqa: F401
    ConfigurationError,
    CropRejected,
    LeakageError,
    OrientationUndefined,
    RetroidError,
    ValidationError,
)
