"""Count-Min sketches over sliding windows, with mergeable window counters."""
from .errors import (
    CapacityError,
    DomainError,
    EcmError,
    FormatError,
    IncompatibleError,
    OrderingError,
    RangeError,
    UnsupportedMergeError,
)
from .heavy import DyadicStack, dyadic_cover
from .kernels import IMPLEMENTATION
from .oracle import ExactWindowStore
from .sketch import EcmSketch, SketchPlan, compose, plan
from .windows import (
    DeterministicWave,
    ExponentialHistogram,
    RandomizedWave,
    WindowConfig,
    eh_error_for_levels,
    load_synopsis,
    make_synopsis,
    merge_synopses,
)

__version__ = "0.1.0"

__all__ = [
    "CapacityError", "DomainError", "EcmError", "FormatError", "IncompatibleError",
    "OrderingError", "RangeError", "UnsupportedMergeError",
    "DyadicStack", "dyadic_cover", "IMPLEMENTATION", "ExactWindowStore",
    "EcmSketch", "SketchPlan", "compose", "plan",
    "DeterministicWave", "ExponentialHistogram", "RandomizedWave", "WindowConfig",
    "eh_error_for_levels", "load_synopsis", "make_synopsis", "merge_synopses",
]
