"""Exception types shared across the package.

Each class maps onto one CLI exit code, see :mod:`loo_kernel.cli`.
"""


class LooKernelError(Exception):
    """Base class for all errors raised by this package."""


class DomainError(LooKernelError, ValueError):
    """An argument lies outside the domain of the operation."""


class ConsistencyError(DomainError):
    """Two inputs that must agree (shapes, row counts) do not."""


class ConfigError(DomainError):
    """A sweep or CLI configuration is invalid."""


class ParseError(LooKernelError):
    """A data file could not be parsed."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class SingularityError(LooKernelError, ArithmeticError):
    """A leave-one-out denominator vanished.

    ``indices`` lists the offending points.
    """

    def __init__(self, message: str, indices=()):
        super().__init__(message)
        self.indices = [int(i) for i in indices]
