"""Exception hierarchy shared by all locstat modules."""


class LocStatError(Exception):
    """Base class for every error raised by locstat."""


class ConfigurationError(LocStatError, ValueError):
    pass


class DimensionError(LocStatError, ValueError):
    pass


class PartitionError(LocStatError, ValueError):
    """No admissible sub-cube side (no divisor >= 2 below the requested size)."""


class ResolutionError(LocStatError, ValueError):
    pass


class ContractViolation(LocStatError, ValueError):
    """Input breaks a documented precondition, e.g. a non-symmetric matrix."""


class IntervalError(LocStatError, ValueError):
    pass


class ScaleError(LocStatError, ValueError):
    pass


class OracleSizeError(LocStatError, ValueError):
    pass


class NumericalError(LocStatError, ArithmeticError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class EmptyEnsembleError(LocStatError, ValueError):
    pass


class InsufficientDesignError(LocStatError, ValueError):
    pass
