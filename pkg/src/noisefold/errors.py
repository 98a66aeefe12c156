"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Matrix or vector dimensions violate an operation's precondition."""


class DomainError(ValueError):
    """Scalar parameter outside its mathematical domain (e.g. p not in [1, 2])."""


class ParameterError(ValueError):
    """Inconsistent generation or solver parameters."""


class BudgetError(RuntimeError):
    """An exact enumeration would exceed the declared combinatorial budget."""


class PreconditionError(ValueError):
    """A theorem-derived precondition fails, so the requested quantity is undefined."""


class InfeasibleError(RuntimeError):
    """Constraint system detected infeasible; usually signals a wrong support."""


class NumericError(RuntimeError):
    """Iteration diverged or left its numerical domain; carries diagnostics."""
