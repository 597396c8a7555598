"""Exception types raised across the package."""


class MectError(Exception):
    """Base class for all package errors."""


class MalformedTable(MectError, ValueError):
    pass


class OutOfRange(MectError, ValueError):
    pass


class MalformedSpectrum(MectError, ValueError):
    pass


class EmptySpectrum(MectError, ValueError):
    pass


class ShapeError(MectError, ValueError):
    pass


class DomainError(MectError, ValueError):
    pass


class SearchExhausted(MectError, RuntimeError):
    pass


class Inconclusive(MectError, RuntimeError):
    """No multi-start inversion run converged."""


class ConfigError(MectError, ValueError):
    """Invalid experiment configuration (CLI exit code 2)."""
