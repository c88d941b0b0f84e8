"""Exception types raised across the package."""


class SemidecError(Exception):
    """Base class for all package errors."""


class InvalidComponentSize(SemidecError, ValueError):
    """A topology kind cannot be realized on a component of the requested size."""


class InvalidK(SemidecError, ValueError):
    """Sample size outside ``1 <= K <= n``."""


class DimensionMismatch(SemidecError, ValueError):
    pass


class NonFiniteState(SemidecError, FloatingPointError):
    """The parameter matrix picked up a NaN or inf entry (divergent stepsize)."""

    def __init__(self, round_: int, message: str | None = None):
        self.round = round_
        super().__init__(message or f"non-finite parameters at round {round_}")


class InvalidConfig(SemidecError, ValueError):
    pass


class NotConverged(SemidecError, RuntimeError):
    pass


class InvalidParams(SemidecError, ValueError):
    """Recursion parameters violate ``C < 1`` or hit the ``a2 == 1`` singularity."""


class StepsizeTooLarge(SemidecError, ValueError):
    pass


class DivergentAtK1(SemidecError, ValueError):
    """S2S bounds carry a ``(n-1)/(K-1)`` factor and blow up at ``K = 1``."""


class Unreachable(SemidecError, RuntimeError):
    pass


class DegenerateBlock(SemidecError, ValueError):
    """A singleton component has no second eigenvalue."""
