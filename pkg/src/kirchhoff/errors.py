"""Exception hierarchy shared by all modules.

The CLI maps ``ContractError`` to exit code 1 and ``NumericalError`` to
exit code 2.
"""


class KirchhoffError(Exception):
    """Base class for every error raised by this package."""


class ContractError(KirchhoffError, ValueError):
    """A precondition on the inputs of an operation was violated."""


class ConfigurationError(ContractError):
    """A configuration (bracket, grid, file) cannot be used as given."""


class NumericalError(KirchhoffError, RuntimeError):
    """A computation ran but did not meet its accuracy or convergence contract."""


class AccuracyError(NumericalError):
    """A quadrature or resolution requirement is not met."""


class InsufficientDataError(ContractError):
    """Too few usable data points for a fit or report."""
