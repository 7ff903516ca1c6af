"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the domain where an operation is defined."""


class ValidationError(ValueError):
    """Input data (panel, config, spec file) failed validation."""
