"""Exception hierarchy. CLI exit codes map onto these classes."""


class CpsurvError(Exception):
    """Base class for all package errors."""


class SchemaError(CpsurvError):
    """Input file violates the declared column schema."""


class ValidationError(CpsurvError):
    """Arguments or configuration violate a documented precondition."""


class DomainError(ValidationError):
    """Numeric argument outside a function's mathematical domain."""


class ConvergenceError(CpsurvError):
    """An iterative numerical routine failed to converge."""


class EvaluationError(CpsurvError):
    """A numeric evaluation produced a non-finite result."""
