"""Exception types shared across the package."""


class TagPoisonError(Exception):
    """Base class for all package errors."""


class DatasetError(TagPoisonError):
    """Malformed or inconsistent dataset files."""


class ConfigError(TagPoisonError):
    """Invalid configuration values."""


class ShapeError(TagPoisonError):
    """Incompatible tensor / vector shapes."""


class MetricError(TagPoisonError):
    """A metric is undefined for the given inputs."""
