"""Exception hierarchy shared by all modules."""


class ReconciliationError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(ReconciliationError, ValueError):
    """Vector or matrix shapes do not agree."""


class RankDeficient(ReconciliationError, ValueError):
    """A parity-check matrix does not have full row rank over GF(2)."""


class InfeasibleSpec(ReconciliationError, ValueError):
    """Degree multisets cannot be realized by any bipartite graph."""


class ConstructionFailed(ReconciliationError, RuntimeError):
    """Matrix construction gave up after its retry budget."""


class ParseError(ReconciliationError, ValueError):
    """Malformed alist text. ``lineno`` is 1-based, or None at end of input."""

    def __init__(self, message, lineno=None):
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)


class ConsistencyError(ReconciliationError, ValueError):
    """Row and column adjacency lists describe different edge sets."""


class FamilyMismatch(ReconciliationError, ValueError):
    """Syndrome sets belong to different code families or differ in size."""


class EmptySample(ReconciliationError, ValueError):
    """Sampling estimator called with no bits."""


class InvalidErrorRate(ReconciliationError, ValueError):
    """Error rate outside the open interval (0, 0.5)."""


class ZeroEntropy(ReconciliationError, ZeroDivisionError):
    """Efficiency is undefined because h(e) = 0."""
