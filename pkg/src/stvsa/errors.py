"""Exception hierarchy shared by every stage of the pipeline.

The CLI maps these onto exit codes: validation problems exit with 1,
numeric faults with 2.
"""


class StvsaError(Exception):
    """Base class for all package errors."""


class ConfigurationError(StvsaError, ValueError):
    """Invalid configuration, empty inputs, or a violated precondition."""


class ShapeError(StvsaError, ValueError):
    """Incompatible tensor or dataset shapes."""


class DomainError(StvsaError, ValueError):
    """Input outside the mathematical domain of an operation."""


class ContractError(StvsaError, RuntimeError):
    """API misuse, e.g. calling backward on a non-scalar tensor."""


class UnsupportedOpError(StvsaError, NotImplementedError):
    """An operation lacks the derivative order that was requested."""


class NumericFault(StvsaError, ArithmeticError):
    """NaN/inf detected in a loss, gradient, or activation."""
