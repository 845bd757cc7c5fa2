"""Event streams: binary format, coincidence matching and measured statistics."""

from .estimate import InconsistentInputsError, ParameterEstimate, estimate_parameters
from .histograms import (
    CorrelationHistogram,
    GaussianFit,
    NoPeakError,
    build_histograms,
    fit_gaussian,
)
from .matching import Coincidence, CoincidenceSet, match_arrays, match_coincidences
from .matrix import MatrixTally, matrix_from_events
from .stream import (
    DETECTORS,
    BadMagicError,
    EventFormatError,
    EventRecord,
    EventStreamHeader,
    RecordCountMismatchError,
    TimestampRegressionError,
    TruncatedStreamError,
    UnsupportedVersionError,
    make_records,
    parse_stream,
    read_stream,
    serialize,
    write_stream,
)

__all__ = [
    "BadMagicError",
    "Coincidence",
    "CoincidenceSet",
    "CorrelationHistogram",
    "DETECTORS",
    "EventFormatError",
    "EventRecord",
    "EventStreamHeader",
    "GaussianFit",
    "InconsistentInputsError",
    "MatrixTally",
    "NoPeakError",
    "ParameterEstimate",
    "RecordCountMismatchError",
    "TimestampRegressionError",
    "TruncatedStreamError",
    "UnsupportedVersionError",
    "build_histograms",
    "estimate_parameters",
    "fit_gaussian",
    "make_records",
    "match_arrays",
    "match_coincidences",
    "matrix_from_events",
    "parse_stream",
    "read_stream",
    "serialize",
    "write_stream",
]
