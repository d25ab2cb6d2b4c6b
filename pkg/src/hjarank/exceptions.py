"""Exception and warning types raised across the package."""


class HjaError(Exception):
    """Base class for all package errors."""


class ValidationError(HjaError, ValueError):
    """Input data or arguments violate a documented precondition."""


class FormatError(ValidationError):
    """An input file does not follow the documented layout."""


class ConnectivityError(ValidationError):
    """A comparison graph required to be connected is not.

    ``components`` holds the item-index sets of the offending graph.
    """

    def __init__(self, message, components=None, judge=None):
        super().__init__(message)
        self.components = components or []
        self.judge = judge


class RankTooLarge(ValidationError):
    def __init__(self, rank, max_rank):
        super().__init__(f"rank {rank} exceeds the maximum allowed rank {max_rank}")
        self.rank = rank
        self.max_rank = max_rank


class DegenerateConsensus(HjaError):
    """The column sums of the score matrix vanish, so no consensus direction exists."""


class ReanchorFailed(HjaError):
    """Re-anchoring tripped one of its guards.

    ``guard`` is ``"norm"`` when the consensus vector is too short and
    ``"spectral"`` when the r-th singular value is too small.
    """

    def __init__(self, guard, value, threshold):
        super().__init__(f"re-anchoring failed at the {guard} guard ({value:.3g} < {threshold:.3g})")
        self.guard = guard
        self.value = value
        self.threshold = threshold


class SolverStalled(HjaError):
    pass


class ChartError(HjaError):
    """The constraint Jacobian lost rank at the anchored point."""


class SingularInformation(HjaError):
    def __init__(self, message, graph_report=None):
        super().__init__(message)
        self.graph_report = graph_report


class SelectionError(HjaError):
    pass


class InsufficientNearTiePairs(HjaError):
    pass


class AmbiguousRank(UserWarning):
    """Two singular values at the truncation point are numerically tied."""
