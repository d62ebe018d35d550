"""Exception hierarchy shared by all trafficsynth modules."""


class TrafficSynthError(Exception):
    """Base class for all package errors."""


class DomainError(TrafficSynthError, ValueError):
    """An argument is outside the documented domain of an operation."""


class ConfigurationError(TrafficSynthError):
    """A config file, data table or parameter combination is invalid."""


class ValidationError(TrafficSynthError):
    """A dataset artifact (manifest, audio, features) failed validation."""
