"""Exception types raised across the package."""


class AutobidError(Exception):
    """Base class for package errors."""


class MalformedRequestError(AutobidError, ValueError):
    pass


class DomainError(AutobidError, ValueError):
    """An input lies outside the domain where a formula or curve is defined."""


class InvalidMechanismError(AutobidError, ValueError):
    pass


class PlanningError(AutobidError, ValueError):
    pass


class ConfigError(AutobidError, ValueError):
    """Configuration failed validation. ``key`` names the offending entry."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


class EmptyFrontierError(AutobidError):
    """No report on the calibration grid achieves positive conversions."""
