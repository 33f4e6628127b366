"""Exception hierarchy.

Every error raised deliberately by the package derives from
:class:`SuperradError`, so callers (the CLI in particular) can separate
physics/numerics failures from programming errors.
"""


class SuperradError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(SuperradError, ValueError):
    pass


class CoincidentPointError(SuperradError, ValueError):
    pass


class NotPositiveSemidefiniteError(SuperradError, ArithmeticError):
    pass


class UnsupportedGeometryError(SuperradError, ValueError):
    pass


class BasisCoverageError(SuperradError, ValueError):
    pass


class IntegrationError(SuperradError, ArithmeticError):
    """Raised when an ODE solve fails or drifts out of its invariants."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class UndefinedCorrelationError(SuperradError, ArithmeticError):
    pass


class UndefinedPatternError(SuperradError, ArithmeticError):
    pass


class FitDomainError(SuperradError, ValueError):
    pass


class ConfigValidationError(SuperradError, ValueError):
    """Carries the full list of validation diagnostics."""

    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        super().__init__("; ".join(self.diagnostics) or "invalid configuration")
