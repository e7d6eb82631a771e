"""Time and location prediction for social spatial-temporal events (SSTEs).

Pipeline: check-ins and a friendship graph are grouped into SSTEs, each
user's inter-event intervals are modelled by an ARMA process whose AR
coefficients are tracked online with a Kalman filter, and the location of
the next event is ranked by a blend of temporal and social scores.
"""

from .errors import (
    DataError,
    DegenerateSeries,
    FilterError,
    FutureCheckin,
    InsufficientHistory,
    NoCandidates,
    SstePredError,
)

__version__ = "0.1.0"

__all__ = [
    "DataError",
    "DegenerateSeries",
    "FilterError",
    "FutureCheckin",
    "InsufficientHistory",
    "NoCandidates",
    "SstePredError",
    "__version__",
]
