"""Exception hierarchy shared by every module of the package."""


class SurrogateError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(SurrogateError, ValueError):
    """Vector lengths or group structures do not agree."""


class SingularGroupError(SurrogateError, ValueError):
    """A group norm is too close to zero for the requested derivative."""

    def __init__(self, group, norm):
        self.group = group
        self.norm = norm
        super().__init__(f"group {group} has norm {norm:.3e}, gradient is singular there")


class NearZeroCoordinateError(SurrogateError, ValueError):
    def __init__(self, index, value):
        self.index = index
        self.value = value
        super().__init__(f"coordinate {index} of the anchor is {value:.3e}; cannot divide by it")


class NonPositiveCurvatureError(SurrogateError, ValueError):
    def __init__(self, index, value):
        self.index = index
        self.value = value
        super().__init__(f"curvature entry {index} is {value!r}, must be > 0")


class NonFiniteValueError(SurrogateError, FloatingPointError):
    """A user-supplied function returned nan or inf."""


class InfeasibleStartError(SurrogateError, ValueError):
    """The starting point violates the original constraint."""


class InnerSolverError(SurrogateError, RuntimeError):
    """The quadratically constrained least-squares subproblem could not be solved.

    ``iteration`` is filled in by the outer loop when the failure happens inside
    an iterative solve; ``trace`` then holds the records gathered so far.
    """

    def __init__(self, message, bracket=None, iteration=None, trace=None):
        self.bracket = bracket
        self.iteration = iteration
        self.trace = trace
        super().__init__(message)


class MajorizationError(SurrogateError, RuntimeError):
    """The objective increased during an MM step, so the surrogate is not a majorizer."""


class OracleError(SurrogateError, ValueError):
    """The brute-force global solver cannot handle the instance."""


class MonteCarloError(SurrogateError, RuntimeError):
    """Too many Monte Carlo runs failed for the summary to be meaningful."""
