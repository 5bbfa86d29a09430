"""Exception types shared across the toolkit."""


class DomainError(ValueError):
    """Input violates a documented precondition."""


class ResourceLimitError(DomainError):
    """Requested size exceeds a hard resource guard."""


class InfeasibleError(DomainError):
    """The constraint set of a solve is empty (e.g. nonzero total source)."""


class DegenerateSliceError(DomainError):
    """A slicing sphere passes through the tolerance band of a point charge."""


class SingularityError(DomainError):
    """A field was evaluated at (or too close to) one of its charge points."""


class ConvergenceError(RuntimeError):
    """A solver ran out of iterations.

    The best iterate found so far is attached as ``.result`` so callers can
    inspect or reuse it.
    """

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result
