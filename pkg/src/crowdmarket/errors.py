"""Shared exception types."""


class CrowdMarketError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(CrowdMarketError):
    """Bad configuration: unknown key, missing key, or out-of-range value."""


class SolverError(CrowdMarketError):
    """Max-entropy solver failed to converge. Carries the last iterate."""

    def __init__(self, message, distribution=None):
        super().__init__(message)
        self.distribution = distribution


class IntegrityError(CrowdMarketError):
    """A hash-chained structure failed verification. Carries the stage index."""

    def __init__(self, message, stage=None):
        super().__init__(message)
        self.stage = stage


class MarketError(CrowdMarketError):
    """A market operation was rejected (duplicate listing, bad bid, ...)."""
