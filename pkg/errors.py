"""
HeatFlow Lab - Error Types
==========================
Every failure the lab can report derives from LabError so the command-line
front end can map it to a nonzero exit status with a one-line message.
"""

from typing import Dict, List, Optional


class LabError(Exception):
    """Base class for all lab failures."""


class StructuralError(LabError):
    """Shape, twist or form-degree mismatch between fields."""


class PreconditionError(LabError):
    """An operation was called outside its contract."""


class NumericalError(LabError):
    """A numerical breakdown, e.g. a singular metric."""

    def __init__(self, message: str, location: Optional[tuple] = None):
        super().__init__(message if location is None else f"{message} at grid index {location}")
        self.location = location


class FlowAbort(LabError):
    """The integrator could not take an acceptable step."""

    def __init__(self, message: str, last_state=None):
        super().__init__(message)
        self.last_state = last_state


class NoLimitError(LabError):
    """Normalized snapshots do not form a Cauchy sequence."""

    def __init__(self, message: str, gaps: List[float]):
        super().__init__(f"{message}; gaps={['%.3e' % g for g in gaps]}")
        self.gaps = list(gaps)


class RankPlateauError(LabError):
    """Pointwise numerical rank has no dominant value over the grid."""

    def __init__(self, message: str, histogram: Dict[int, int]):
        super().__init__(f"{message}; eigen-count histogram={histogram}")
        self.histogram = dict(histogram)


class UndefinedSlopeError(LabError):
    """Slope of a rank-zero subsheaf requested."""


class ScenarioError(LabError):
    """Malformed scenario; `key` is the dotted path of the offending entry."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


class FrobeniusStageError(LabError):
    """A gauge stage left a nonzero relation residual."""

    def __init__(self, stage: str, residual: float):
        super().__init__(f"stage {stage} left residual {residual:.3e}")
        self.stage = stage
        self.residual = residual
