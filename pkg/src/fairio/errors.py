"""Exception types shared across the package."""


class FairIOError(Exception):
    """Base class for all package errors."""


class PolicyParseError(FairIOError, ValueError):
    def __init__(self, message, token=None):
        super().__init__(message)
        self.token = token


class NoActiveJobs(FairIOError):
    def __init__(self, message="no active jobs"):
        super().__init__(message)


class IntegrityError(FairIOError):
    """Two records for the same job disagree on an immutable attribute."""


class NothingToDispatch(FairIOError):
    def __init__(self, message="nothing to dispatch"):
        super().__init__(message)


class Throttled(FairIOError):
    """Every job with pending work is out of tokens."""

    def __init__(self, message="throttled"):
        super().__init__(message)


class ConfigError(FairIOError, ValueError):
    """Invalid simulation config or scenario document."""
