"""Exception hierarchy shared across the package."""


class SGMCMCError(Exception):
    """Base class for all package errors."""


class ConfigurationError(SGMCMCError, ValueError):
    """Invalid or unknown configuration."""


class DimensionError(SGMCMCError, ValueError):
    """State layout or vector length does not match what the model expects."""


class NumericError(SGMCMCError, ArithmeticError):
    """A non-finite value was produced where a finite one is required."""


class StructuralError(SGMCMCError):
    """A matrix field violates PSD / skew-symmetry requirements."""


class StepError(SGMCMCError):
    """A discretised update cannot be carried out at the requested step size."""


class DomainError(SGMCMCError, ValueError):
    """Parameters lie outside the support required by a model."""


class ParseError(SGMCMCError, ValueError):
    """Malformed input file."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ReconstructionError(SGMCMCError):
    """Curl reconstruction hypotheses do not hold on the supplied grid."""

    def __init__(self, message, residual):
        super().__init__(f"{message} (sup-norm residual {residual:.3e})")
        self.residual = residual
