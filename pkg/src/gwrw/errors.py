"""Exception types shared across the package."""


class GWRWError(Exception):
    """Base class for all package errors."""


class InvalidLaw(GWRWError):
    """An offspring law violates one of its invariants."""


class NotSupercritical(InvalidLaw):
    """Mean offspring number is <= 1; no surviving tree to walk on."""


class NoLeaves(InvalidLaw):
    """p_0 = 0; the tree has no leaves and no traps."""


class NotSubballistic(GWRWError):
    """Bias is at or below the critical value 1/f'(q)."""


class DegreeImpossible(GWRWError):
    """Requested a backbone degree the surviving-offspring law cannot produce."""


class AlphaOutOfRange(GWRWError):
    """Toy-sum tail exponent is >= 1, outside the heavy-tail regime."""


class TrapBudget(GWRWError):
    """A trap exceeded the configured vertex cap (misconfiguration guard)."""


class BudgetExceeded(GWRWError):
    """A walk exceeded its step budget.  Carries the partial record."""

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class PartialResult(GWRWError):
    """A parallel run failed part-way; carries the completed replica count."""

    def __init__(self, message, completed: int):
        super().__init__(message)
        self.completed = completed
