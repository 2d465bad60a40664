"""Exception types raised across the package."""


class DegenerateDataError(ValueError):
    """Data carries no usable spread (e.g. every point identical)."""


class CapacityError(ValueError):
    """A requested feature map would exceed the configured size cap."""


class IncompatibleEmbeddingError(ValueError):
    """Two embeddings were built from different feature maps."""


class SensitivityMismatchError(ValueError):
    """Noise calibration does not match the embedding's sensitivity."""


class UnsupportedCalibrationError(ValueError):
    """The requested calibration method is not valid for these parameters."""


class NumericalError(RuntimeError):
    """Training produced a non-finite value."""
