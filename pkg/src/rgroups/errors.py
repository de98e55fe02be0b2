class RGroupsError(Exception):
    """Base class for all errors raised by the package."""


class DomainError(RGroupsError, ValueError):
    """A point, path or expression left the admissible chart domain."""


class MetricError(RGroupsError, ValueError):
    """The metric is not symmetric positive definite at a point."""


class MetricParseError(RGroupsError, ValueError):
    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"line {line}, column {col}: {message}")
        self.message = message
        self.line = line
        self.col = col


class SolverError(RGroupsError):
    """A geodesic boundary-value solve failed to converge.

    ``reason`` is machine readable: ``out-of-injectivity-radius``,
    ``domain-exit`` or ``non-finite``.
    """

    def __init__(self, message: str, reason: str = "out-of-injectivity-radius"):
        super().__init__(message)
        self.reason = reason
