"""Exception types shared across the package."""


class HiroError(Exception):
    """Base class for all errors raised by this package."""


class IngestError(HiroError):
    """Raised when an input review file cannot be parsed."""


class ConfigError(HiroError):
    """Raised when a configuration value violates its constraints."""


class TransportError(HiroError):
    """Raised when an HTTP backend stays unreachable after retries."""


class StageError(HiroError):
    """Raised when a pipeline stage is run out of order or on stale inputs."""
