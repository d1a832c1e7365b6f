"""Exception types shared across the package.

Each maps onto one CLI exit code (see :mod:`copula_dib.cli`).
"""


class CopulaDIBError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class DomainError(CopulaDIBError, ValueError):
    """Argument outside the mathematical domain of a function."""

    exit_code = 2


class UsageError(CopulaDIBError, ValueError):
    """Inconsistent shapes, counts or options supplied by the caller."""

    exit_code = 2


class DataError(CopulaDIBError, ValueError):
    """Input data that cannot be processed (non-finite, degenerate, malformed)."""

    exit_code = 3


class NumericError(CopulaDIBError, ArithmeticError):
    """Non-finite value produced during a computation."""

    exit_code = 4
