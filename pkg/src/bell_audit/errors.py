"""
Exception hierarchy shared across bell_audit modules.
"""


class BellAuditError(Exception):
    """Base class for all bell_audit errors."""
    pass


class ValidationError(BellAuditError, ValueError):
    """Raised when an input table, profile or parameter is invalid."""
    pass


class TrialOrderError(ValidationError):
    """Raised when trial indices are not strictly increasing."""
    pass


class InsufficientDataError(ValidationError):
    """Raised when a setting combination has no trials."""
    pass


class DegenerateDenominatorError(ValidationError):
    """Raised when 1 - eps_minus is not positive."""
    pass


class InfeasibleExperimentError(BellAuditError):
    """Raised when the expected violation cannot outrun the adapted bound."""
    pass


class BracketError(BellAuditError):
    """Raised when a bisection interval has no sign change."""
    pass
