"""Exception taxonomy shared across the package."""


class DpmhError(Exception):
    """Base class for all package errors."""


class ConfigurationError(DpmhError):
    """Invalid configuration value or incompatible parameters."""


class DataValidationError(DpmhError):
    """Dataset fails a structural or semantic requirement."""


class NumericError(DpmhError):
    """A computation produced a non-finite or degenerate result."""


class InvariantViolationError(DpmhError):
    """An internal invariant was breached (e.g. a probability left [0, 1])."""


class DiagnosticsError(DpmhError):
    """A diagnostic's own precondition failed (e.g. non-reversible kernel)."""
