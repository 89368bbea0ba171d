"""Exception types shared across the package."""


class WidthredError(Exception):
    """Base class for all errors raised by this package."""


class DimensionMismatch(WidthredError):
    """Operands have inconsistent shapes."""


# Alias used by the instance loader, where the same condition is detected
# while validating a file rather than an in-memory call.
DimensionError = DimensionMismatch


class RankDeficient(WidthredError):
    """A KKT system is singular beyond what regularization can absorb."""


class InvalidParameter(WidthredError):
    """A numeric parameter is outside its admissible range."""


class EmptyVector(WidthredError):
    """An operation that needs at least one entry received none."""


class MissingConstant(WidthredError):
    """A self-concordance reduction needs a constant that was not supplied."""


class UnsupportedOrder(WidthredError):
    """The general-self-concordance order is outside the reducible range."""


class Infeasible(WidthredError):
    """The equality constraints A x = b admit no solution."""


class InfeasibleAugmented(WidthredError):
    """The gradient-level constraint of an inner solve is inconsistent.

    Raised when the hyperplane fixing the linear progress of a residual
    step cannot be met inside the constraint null space; callers treat it
    as "this target level overshoots" and move to the next level.
    """


class TheoryViolation(WidthredError):
    """A step-count guard was exceeded.

    Indicates mis-set scale constants or a loss outside the certified
    class; surfaced instead of looping past the guaranteed caps.
    """


class OracleFailure(WidthredError):
    """An inner weighted least-squares solve failed."""


class NonConverged(WidthredError):
    """A verification oracle stopped before reaching its tolerance."""

    def __init__(self, message, grad_norm=None):
        super().__init__(message)
        self.grad_norm = grad_norm


class OutOfDomain(WidthredError):
    """A point lies outside the radius the operation assumes."""


class ParseError(WidthredError):
    """An instance file could not be decoded."""


class RankWarning(UserWarning):
    """Dependent constraint rows were dropped during preprocessing."""
