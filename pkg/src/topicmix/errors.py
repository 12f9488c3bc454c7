"""Exception types shared across the toolkit."""


class MixError(Exception):
    """Base class for all toolkit errors."""


class DataError(MixError):
    """Bad or inconsistent input data (CLI exit code 2)."""


class ServiceError(MixError):
    """A remote service failed or returned garbage (CLI exit code 3)."""
