"""Exception types shared across the package."""


class FluxRtnError(Exception):
    """Base class for all package-specific errors."""


class ParameterError(FluxRtnError, ValueError):
    """An argument or configuration value is invalid or inconsistent."""


class RangeError(FluxRtnError, ValueError):
    """A query point lies outside the domain a sampled object covers."""


class DomainError(FluxRtnError, ValueError):
    """A physical quantity is outside the attainable or trusted region."""
