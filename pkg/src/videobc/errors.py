"""Exception hierarchy shared across the package."""


class VideoBCError(Exception):
    """Base class for all package errors."""


class ConfigurationError(VideoBCError):
    """Invalid configuration values or mismatched component shapes."""


class UsageError(VideoBCError):
    """API misuse, e.g. stepping a finished episode."""


class DatasetError(VideoBCError):
    """Corrupt, missing or undersized datasets."""


class NumericError(VideoBCError):
    """Non-finite values where finite ones are required."""
