"""Exception types shared across the package."""


class ChanceModelError(Exception):
    """Base class for all package errors."""


class SchemaError(ChanceModelError):
    """Input table is missing a mandatory column or is otherwise unreadable."""


class DataIntegrityError(ChanceModelError):
    """Input data contradicts itself (e.g. a fixture with three teams)."""


class DomainError(ChanceModelError, ValueError):
    """An argument lies outside the domain of the operation."""


class NumericError(ChanceModelError, ArithmeticError):
    """A numeric computation overflowed or produced a non-finite value."""


class InitializationError(NumericError):
    """The sampler could not start from a finite log-posterior."""
