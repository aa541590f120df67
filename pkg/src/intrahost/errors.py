"""Exception hierarchy for the intrahost package."""

from __future__ import annotations


class IntrahostError(Exception):
    """Base class for all errors raised by this package."""


class NonPositiveParameter(IntrahostError, ValueError):
    pass


class NonUniqueRoot(IntrahostError, ValueError):
    """The net growth function changes sign more than once."""


class HomeostasisViolation(IntrahostError, ValueError):
    """phi is not strictly positive on [0, x*) (e.g. phi(0) <= 0)."""


class NoRootInBracket(IntrahostError, ValueError):
    pass


class DimensionMismatch(IntrahostError, ValueError):
    pass


class SingularMatrix(IntrahostError, ArithmeticError):
    pass


class DomainError(IntrahostError, ValueError):
    """A Lyapunov function was evaluated outside its domain."""


class NotGeneric(IntrahostError):
    """The largest threshold T0 is tied between strains."""


class UnsupportedRecruitment(IntrahostError, TypeError):
    pass


class NoEndemicEquilibrium(IntrahostError):
    """Raised when a strain has no endemic equilibrium (T0 <= 1)."""

    def __init__(self, strain_index: int, t0: float):
        self.strain_index = strain_index
        self.t0 = t0
        super().__init__(
            f"strain {strain_index + 1} has no endemic equilibrium (T0 = {t0:.6g} <= 1)"
        )


class WrongModelShape(IntrahostError, ValueError):
    pass


class StepSizeUnderflow(IntrahostError, ArithmeticError):
    pass


class NonFiniteState(IntrahostError, ArithmeticError):
    pass


class BudgetExceeded(IntrahostError, ValueError):
    pass


class InvalidOptions(IntrahostError, ValueError):
    pass


class UnknownParameter(IntrahostError, KeyError):
    def __str__(self) -> str:
        return str(self.args[0]) if self.args else "unknown parameter"
