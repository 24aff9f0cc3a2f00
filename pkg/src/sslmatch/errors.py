"""Exception hierarchy shared across the toolkit."""


class SslmatchError(Exception):
    """Base class for all toolkit errors."""


class DataLayoutError(SslmatchError):
    """Dataset directory layout is missing or malformed."""


class ConfigError(SslmatchError):
    """Invalid configuration value or flag combination."""


class TrainingDiverged(SslmatchError):
    """Training produced a non-finite loss or gradient."""

    def __init__(self, message, record=None):
        super().__init__(message)
        self.record = record
