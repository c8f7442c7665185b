"""Exception types shared across the package."""


class WavesrError(Exception):
    """Base class for package errors."""


class ImageIOError(WavesrError):
    """Unreadable file, unsupported format, or unsupported bit depth."""


class ConfigError(WavesrError):
    """Invalid configuration (unknown key, bad value, missing required key)."""


class NumericError(WavesrError):
    """Non-finite values encountered where finite values are required."""


class TrainingDiverged(NumericError):
    """Training loss became non-finite. Carries the last finite parameters."""

    def __init__(self, message, params=None):
        super().__init__(message)
        self.params = params
