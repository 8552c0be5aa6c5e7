"""Exception hierarchy shared by the library and the CLI.

The CLI maps these onto process exit codes: configuration problems exit 2,
numeric failures exit 3, capacity guards exit 4.
"""


class LmpseqError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(LmpseqError, ValueError):
    """Invalid user-supplied configuration or arguments."""


class ValidationError(ConfigError):
    """An input object is inconsistent (partial stop map, mismatched multipliers, ...)."""


class DomainError(LmpseqError, ValueError):
    """A value lies outside the support or parameter space of a family."""


class UnsupportedModelError(LmpseqError, TypeError):
    """The operation needs an i.i.d. (or finite discrete) family."""


class NumericError(LmpseqError, ArithmeticError):
    """Non-finite values, failed convergence or a bracketing failure."""


class StaleInputError(NumericError):
    """A value function grid was used before it converged."""


class GridTooNarrowError(NumericError):
    """No sign change of the boundary equation inside the grid range."""


class CapacityError(LmpseqError, RuntimeError):
    """A tree or enumeration would exceed its size guard."""
