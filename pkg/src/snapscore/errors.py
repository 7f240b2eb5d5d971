"""Shared exception types used for CLI exit-code mapping."""


class DataError(ValueError):
    """A data file is missing pieces, malformed, or internally inconsistent."""
