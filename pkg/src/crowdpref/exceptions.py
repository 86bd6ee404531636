"""Exception types raised across the package."""


class CrowdPrefError(Exception):
    """Base class for all package errors."""


class InvalidInputError(CrowdPrefError, ValueError):
    """Arguments have the wrong shape, range or content."""


class InvalidConfigError(CrowdPrefError, ValueError):
    """A configuration value or key is not acceptable."""


class NumericalFailure(CrowdPrefError, ArithmeticError):
    """A factorisation failed even after jitter escalation."""


class InternalConsistencyError(CrowdPrefError, RuntimeError):
    """Internal bookkeeping broke an invariant (indicates a bug)."""


class DataLoadError(CrowdPrefError, ValueError):
    """A dataset file is missing or malformed."""
