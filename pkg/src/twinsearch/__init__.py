"""Exact twin subsequence search under Chebyshev distance.

Four interchangeable engines answer the same query: a sweepline scan, a
mean-value inverted index, an iSAX tree and an envelope tree (``TsIndex``).
"""

from twinsearch.ingest import SeriesSource, SourceKind, generate, load_series, sample_workload
from twinsearch.isax import IsaxIndex
from twinsearch.kvindex import KvIndex
from twinsearch.series import (
    NormalizationMode,
    Query,
    SearchStats,
    SubseqRef,
    SweeplineEngine,
    TimeSeries,
    chebyshev,
    euclidean,
    is_twin,
    sweepline_search,
    znormalize,
)
from twinsearch.tsindex import TsIndex

__version__ = "0.1.0"

__all__ = [
    "IsaxIndex",
    "KvIndex",
    "NormalizationMode",
    "Query",
    "SearchStats",
    "SeriesSource",
    "SourceKind",
    "SubseqRef",
    "SweeplineEngine",
    "TimeSeries",
    "TsIndex",
    "chebyshev",
    "euclidean",
    "generate",
    "is_twin",
    "load_series",
    "sample_workload",
    "sweepline_search",
    "znormalize",
]
