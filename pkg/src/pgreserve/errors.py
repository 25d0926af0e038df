"""Exception hierarchy. The CLI maps each family onto an exit code."""


class PGReserveError(Exception):
    """Base class for all package errors."""


class ValidationError(PGReserveError, ValueError):
    """Bad parameters or configuration (exit code 2)."""


class DataError(PGReserveError):
    """Input data unusable: malformed logs, empty selections, missing artifacts (exit code 3)."""


class NumericalError(PGReserveError, ArithmeticError):
    """A numerical routine failed (exit code 4)."""


class QuadratureError(NumericalError):
    pass


class RankDeficientError(NumericalError):
    pass
