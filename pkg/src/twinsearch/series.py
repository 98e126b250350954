"""Time series container, normalization frames, distances and the sweepline scan."""

from __future__ import annotations

import enum
import hashlib
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "NormalizationMode",
    "TimeSeries",
    "SubseqRef",
    "Query",
    "SearchStats",
    "SeriesView",
    "chebyshev",
    "euclidean",
    "reorder_by_magnitude",
    "is_twin",
    "znormalize",
    "mean",
    "materialize_subsequence",
    "verify_positions",
    "sweepline_search",
    "SweeplineEngine",
]

# rows per block when scanning every window; bounds the temporary at ~8 MB for l=100
_SCAN_ROWS = 8192
# columns per early-abandon step during batched verification
_VERIFY_COLS = 8


class NormalizationMode(enum.Enum):
    RAW = "raw"
    GLOBAL_Z = "zglobal"
    PER_SUBSEQ_Z = "zsub"

    @classmethod
    def parse(cls, value) -> "NormalizationMode":
        if isinstance(value, cls):
            return value
        try:
            return cls(value)
        except ValueError:
            try:
                return cls[str(value).upper()]
            except KeyError:
                raise ValueError(
                    f"unknown normalization mode {value!r}; "
                    f"expected one of {[m.value for m in cls]}"
                ) from None

    @property
    def code(self) -> int:
        return list(NormalizationMode).index(self)

    @classmethod
    def from_code(cls, code: int) -> "NormalizationMode":
        modes = list(cls)
        if not 0 <= code < len(modes):
            raise ValueError(f"invalid normalization mode code {code}")
        return modes[code]


def _as_vector(values, name="values") -> np.ndarray:
    a = np.asarray(values, dtype=np.float64)
    if a.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {a.shape}")
    return a


def _check_same_length(a: np.ndarray, b: np.ndarray):
    if a.shape[0] != b.shape[0]:
        raise ValueError(f"length mismatch: {a.shape[0]} != {b.shape[0]}")
    if a.shape[0] == 0:
        raise ValueError("sequences must not be empty")


def chebyshev(a, b) -> float:
    """Maximum absolute pointwise difference of two equal-length sequences."""
    a = _as_vector(a, "a")
    b = _as_vector(b, "b")
    _check_same_length(a, b)
    return float(np.max(np.abs(a - b)))


def euclidean(a, b) -> float:
    a = _as_vector(a, "a")
    b = _as_vector(b, "b")
    _check_same_length(a, b)
    return float(np.sqrt(np.sum((a - b) ** 2)))


def reorder_by_magnitude(q) -> np.ndarray:
    """Indices of ``q`` sorted by decreasing absolute value, ties by index."""
    q = _as_vector(q, "q")
    # stable sort on the negated magnitude keeps ascending index among ties
    return np.argsort(-np.abs(q), kind="stable")


def is_twin(q, s, epsilon: float, order: Optional[Sequence[int]] = None) -> bool:
    """Check ``chebyshev(q, s) <= epsilon``, abandoning at the first violation.

    Parameters
    ----------
    q, s : array-like
        Equal-length sequences.
    epsilon : float
        Distance threshold.
    order : sequence of int, optional
        Visiting order of the timestamps. Defaults to natural order.
    """
    q = _as_vector(q, "q")
    s = _as_vector(s, "s")
    _check_same_length(q, s)
    if order is None:
        order = range(q.shape[0])
    for i in order:
        if abs(q[i] - s[i]) > epsilon:
            return False
    return True


def znormalize(values) -> np.ndarray:
    """Shift to mean 0 and scale to population standard deviation 1.

    A constant input maps to the all-zero vector.
    """
    a = _as_vector(values)
    if a.shape[0] == 0:
        raise ValueError("cannot normalize an empty sequence")
    if a.max() == a.min():
        return np.zeros_like(a)
    return (a - a.mean()) / a.std()


def mean(values) -> float:
    a = _as_vector(values)
    if a.shape[0] == 0:
        raise ValueError("mean of an empty sequence")
    return float(np.mean(a))


class TimeSeries:
    """Immutable, finite-valued sequence of 64-bit samples.

    Normalized views are built lazily and cached per ``(mode, l)``.
    """

    def __init__(self, values, name: str = ""):
        a = np.array(values, dtype=np.float64, copy=True)
        if a.ndim != 1:
            raise ValueError(f"time series must be one-dimensional, got shape {a.shape}")
        if a.shape[0] < 1:
            raise ValueError("time series must contain at least one value")
        bad = np.flatnonzero(~np.isfinite(a))
        if bad.size:
            raise ValueError(f"non-finite value {a[bad[0]]!r} at index {bad[0]}")
        a.setflags(write=False)
        self._values = a
        self.name = name
        self._views: dict = {}
        self._global_z: Optional[np.ndarray] = None
        self._fingerprint: Optional[int] = None

    @property
    def values(self) -> np.ndarray:
        return self._values

    @property
    def n(self) -> int:
        return self._values.shape[0]

    def __len__(self) -> int:
        return self.n

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"<TimeSeries{label} n={self.n}>"

    @property
    def global_mean(self) -> float:
        return float(self._values.mean())

    @property
    def global_std(self) -> float:
        return float(self._values.std())

    @property
    def global_z(self) -> np.ndarray:
        if self._global_z is None:
            z = znormalize(self._values)
            z.setflags(write=False)
            self._global_z = z
        return self._global_z

    @property
    def fingerprint(self) -> int:
        """64-bit digest of the raw values, used to pair index files with series."""
        if self._fingerprint is None:
            digest = hashlib.sha256(self._values.astype("<f8").tobytes()).digest()
            self._fingerprint = int.from_bytes(digest[:8], "little")
        return self._fingerprint

    def view(self, mode, l: int) -> "SeriesView":
        mode = NormalizationMode.parse(mode)
        key = (mode, int(l))
        v = self._views.get(key)
        if v is None:
            v = SeriesView(self, mode, int(l))
            self._views[key] = v
        return v

    def normalize_query(self, values, mode) -> np.ndarray:
        """Bring an external query into the frame of ``mode``.

        Under GLOBAL_Z the series' own mean and standard deviation are used.
        """
        mode = NormalizationMode.parse(mode)
        q = _as_vector(values, "query")
        if mode is NormalizationMode.RAW:
            return q.copy()
        if mode is NormalizationMode.PER_SUBSEQ_Z:
            return znormalize(q)
        sd = self.global_std
        if self._values.max() == self._values.min():
            return np.zeros_like(q)
        return (q - self.global_mean) / sd


@dataclass(frozen=True)
class SubseqRef:
    start: int
    length: int

    def check(self, n: int):
        if self.length < 1:
            raise ValueError(f"subsequence length must be positive, got {self.length}")
        if self.start < 0 or self.start + self.length > n:
            raise ValueError(
                f"subsequence [{self.start}, {self.start + self.length}) "
                f"out of range for series of length {n}"
            )


@dataclass
class Query:
    values: np.ndarray
    epsilon: float
    mode: Optional[NormalizationMode] = None

    def __post_init__(self):
        self.values = _as_vector(self.values, "query")
        if self.values.shape[0] < 1:
            raise ValueError("query must not be empty")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("query contains non-finite values")
        self.epsilon = float(self.epsilon)
        if not self.epsilon >= 0:
            raise ValueError(f"epsilon must be non-negative, got {self.epsilon}")
        if self.mode is not None:
            self.mode = NormalizationMode.parse(self.mode)

    @property
    def l(self) -> int:
        return self.values.shape[0]


@dataclass
class SearchStats:
    nodes_visited: int = 0
    nodes_pruned: int = 0
    candidates: int = 0
    results: int = 0
    elapsed: float = 0.0

    def as_dict(self) -> dict:
        return {
            "nodes_visited": self.nodes_visited,
            "nodes_pruned": self.nodes_pruned,
            "candidates": self.candidates,
            "results": self.results,
            "elapsed": self.elapsed,
        }


class SeriesView:
    """All length-``l`` windows of a series under one normalization mode.

    Every engine and the sweepline oracle read window values through this
    class, so a given window always materializes to the same bits.
    """

    def __init__(self, series: TimeSeries, mode: NormalizationMode, l: int):
        if l < 1:
            raise ValueError(f"subsequence length must be positive, got {l}")
        if l > series.n:
            raise ValueError(f"subsequence length {l} exceeds series length {series.n}")
        self.series = series
        self.mode = mode
        self.l = l
        self.npos = series.n - l + 1
        if mode is NormalizationMode.GLOBAL_Z:
            self.base = series.global_z
        else:
            self.base = series.values
        self._windows = sliding_window_view(self.base, l)
        if mode is NormalizationMode.PER_SUBSEQ_Z:
            w = self._windows
            mu = w.mean(axis=1)
            sd = w.std(axis=1)
            const = w.max(axis=1) == w.min(axis=1)
            # constant windows: x - x == 0 exactly, so they materialize to zeros
            mu[const] = w[const, 0]
            sd[const] = 1.0
            self._mu = mu
            self._sd = sd
        else:
            self._mu = self._sd = None

    @property
    def normalized_per_window(self) -> bool:
        return self._mu is not None

    def window(self, p: int) -> np.ndarray:
        if not 0 <= p < self.npos:
            raise ValueError(f"position {p} out of range [0, {self.npos})")
        w = self._windows[p]
        if self._mu is None:
            return np.array(w)
        return (w - self._mu[p]) / self._sd[p]

    def block(self, start: int, stop: int) -> np.ndarray:
        """Windows ``start..stop-1`` as a 2-D array (may be a read-only view)."""
        w = self._windows[start:stop]
        if self._mu is None:
            return w
        return (w - self._mu[start:stop, None]) / self._sd[start:stop, None]

    def gather(self, positions) -> np.ndarray:
        positions = np.asarray(positions, dtype=np.int64)
        w = self._windows[positions]
        if self._mu is None:
            return w
        return (w - self._mu[positions, None]) / self._sd[positions, None]

    def gather_cols(self, positions: np.ndarray, cols: np.ndarray) -> np.ndarray:
        vals = self.base[positions[:, None] + cols[None, :]]
        if self._mu is None:
            return vals
        return (vals - self._mu[positions, None]) / self._sd[positions, None]

    def verification_order(self, q: np.ndarray) -> np.ndarray:
        if self.mode is NormalizationMode.RAW:
            return np.arange(self.l)
        return reorder_by_magnitude(q)


def materialize_subsequence(T: TimeSeries, ref: SubseqRef, mode) -> np.ndarray:
    ref.check(T.n)
    return T.view(mode, ref.length).window(ref.start)


def verify_positions(view: SeriesView, q: np.ndarray, positions, epsilon: float,
                     order: Optional[np.ndarray] = None) -> np.ndarray:
    """Batched twin verification with early abandoning.

    Timestamps are checked a few columns at a time in ``order``; rows that
    fail are dropped before the next columns are read.  The surviving
    positions are returned in input order.
    """
    alive = np.asarray(positions, dtype=np.int64)
    if order is None:
        order = view.verification_order(q)
    order = np.asarray(order, dtype=np.int64)
    for start in range(0, view.l, _VERIFY_COLS):
        if alive.size == 0:
            break
        cols = order[start:start + _VERIFY_COLS]
        vals = view.gather_cols(alive, cols)
        ok = (np.abs(vals - q[cols]) <= epsilon).all(axis=1)
        alive = alive[ok]
    return alive


def _sweep(view: SeriesView, q: np.ndarray, epsilon: float) -> np.ndarray:
    hits = []
    for start in range(0, view.npos, _SCAN_ROWS):
        stop = min(start + _SCAN_ROWS, view.npos)
        d = np.abs(view.block(start, stop) - q).max(axis=1)
        hits.append(np.flatnonzero(d <= epsilon) + start)
    return np.concatenate(hits) if hits else np.empty(0, dtype=np.int64)


def sweepline_search(T: TimeSeries, q: Query, mode) -> np.ndarray:
    """Every position whose window is within ``q.epsilon`` of the query.

    Scans all ``n - l + 1`` windows; this is the ground truth the indexes
    are checked against.
    """
    l = q.l
    if l > T.n:
        raise ValueError(f"query length {l} exceeds series length {T.n}")
    return _sweep(T.view(mode, l), q.values, q.epsilon)


@dataclass
class SweeplineEngine:
    """Index-free engine with the same ``search`` surface as the indexes."""

    series: TimeSeries
    l: int
    mode: NormalizationMode = NormalizationMode.GLOBAL_Z
    name: str = field(default="sweep", init=False)

    def __post_init__(self):
        self.mode = NormalizationMode.parse(self.mode)
        self.view = self.series.view(self.mode, self.l)

    def search(self, query: Query):
        if query.l != self.l:
            raise ValueError(f"query length {query.l} != indexed length {self.l}")
        if query.mode is not None and query.mode is not self.mode:
            raise ValueError(f"query mode {query.mode.value} != index mode {self.mode.value}")
        t0 = time.perf_counter()
        res = _sweep(self.view, query.values, query.epsilon)
        stats = SearchStats(candidates=self.view.npos, results=int(res.size))
        stats.elapsed = time.perf_counter() - t0
        return res, stats
