"""Exception hierarchy shared by every chemoband module."""


class ChemobandError(Exception):
    """Base class for all package errors."""


class ValidationError(ChemobandError, ValueError):
    """Input parameters or configuration are invalid."""


class NonPositiveParameter(ValidationError):
    def __init__(self, field, value):
        self.field = field
        self.value = value
        super().__init__(f"parameter {field!r} must be strictly positive, got {value!r}")


class RegimeMismatch(ValidationError):
    """A parameter set does not belong to the requested band regime."""


class NumericalError(ChemobandError, ArithmeticError):
    """A numerical procedure failed to deliver a trustworthy answer."""


class OverflowGuard(RuntimeWarning):
    """Issued when closed-form exponents were clamped to their asymptotic limits."""


class QuadratureNotConverged(NumericalError):
    def __init__(self, message, value=None, error=None):
        self.value = value
        self.error = error
        super().__init__(message)


class MissingDerivatives(ValidationError):
    """A profile lacks the derivative arrays an operation needs."""


class BlowupDetected(NumericalError):
    """Integration hit the blow-up guard; carries the partial profile."""

    def __init__(self, message, profile=None, zeta_max=None):
        self.profile = profile
        self.zeta_max = zeta_max
        super().__init__(message)


class StepSizeUnderflow(NumericalError):
    pass


class PositivityViolation(NumericalError):
    pass


class LinearSolveFailure(NumericalError):
    pass


class NoBandDetected(NumericalError):
    pass


class NonPositiveTraceValue(ValidationError):
    pass


class DegenerateBox(ValidationError):
    pass


class GridMismatch(ValidationError):
    pass


class ParseError(ValidationError):
    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        where = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(message + where)
