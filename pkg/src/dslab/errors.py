"""Exception hierarchy shared by all engines."""


class DSLabError(Exception):
    """Base class for every error raised by the laboratory."""


class SymmetryError(DSLabError, ValueError):
    """Input that should be Hermitian is not, beyond tolerance."""

    def __init__(self, message, asymmetry=None):
        super().__init__(message)
        self.asymmetry = asymmetry


class DomainError(DSLabError, ValueError):
    """A scalar function is undefined at some eigenvalue."""

    def __init__(self, message, eigenvalue=None):
        super().__init__(message)
        self.eigenvalue = eigenvalue


class CutError(DSLabError, ValueError):
    """A spectral cut passes too close to an eigenvalue."""

    def __init__(self, message, eigenvalue=None):
        super().__init__(message)
        self.eigenvalue = eigenvalue


class UnknownFamilyError(DSLabError, KeyError):
    pass


class GeometryError(DSLabError, ValueError):
    pass


class AssumptionError(DSLabError):
    """A standing assumption fails in a way that prevents computing a certificate."""

    def __init__(self, message, assumption=None, witness=None):
        super().__init__(message)
        self.assumption = assumption
        self.witness = witness


class SmoothingError(DSLabError):
    pass


class BoundaryMismatchError(DSLabError, ValueError):
    pass


class PreconditionError(DSLabError, ValueError):
    pass


class InvertibilityError(DSLabError):
    def __init__(self, message, patch=None):
        super().__init__(message)
        self.patch = patch


class EndpointError(DSLabError):
    pass


class ResolutionError(DSLabError):
    pass


class AmbiguousKernelError(DSLabError):
    def __init__(self, message, singular_values=None, best_ratio=None):
        super().__init__(message)
        self.singular_values = singular_values
        self.best_ratio = best_ratio


class UngappedEndError(AmbiguousKernelError):
    """A constant end has spectrum on the unit circle of its transfer matrix: no Fredholm truncation."""


class NonConvergenceError(DSLabError):
    def __init__(self, message, trail=None):
        super().__init__(message)
        self.trail = trail or []


class GradingError(DSLabError):
    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = residuals


class ConfigError(DSLabError, ValueError):
    """Malformed or semantically invalid run configuration."""

    def __init__(self, message, key=None, line=None, column=None):
        loc = ""
        if line is not None:
            loc = f" (line {line}, column {column})"
        super().__init__(message + loc)
        self.key = key
        self.line = line
        self.column = column
