"""Exception hierarchy shared by all modules.

The CLI maps :class:`InputError` (and subclasses) to exit code 1 and
:class:`NumericError` / :class:`AnalysisError` to exit code 2.
"""


class RkhsPeError(Exception):
    """Base class for toolkit errors."""


class InputError(RkhsPeError, ValueError):
    """Malformed or out-of-contract input."""


class DomainError(InputError):
    """A point lies outside the manifold model's snap tolerance."""


class NumericError(RkhsPeError, ArithmeticError):
    """Non-finite values, singular systems, or integrator blow-up."""


class AnalysisError(RkhsPeError):
    """An analysis could not reach a conclusion (no period, no valid epsilon, ...)."""
