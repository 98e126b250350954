"""Minimum bounding time series: pointwise upper/lower envelopes and their distances."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Mbts",
    "mbts_of",
    "mbts_expand_with_sequence",
    "mbts_merge",
    "dist_seq_mbts",
    "dist_mbts_mbts",
    "dist_seq_envelopes",
    "pairwise_envelope_gaps",
]

# timestamps per chunk when a cutoff allows abandoning a distance early
_CUTOFF_CHUNK = 16


@dataclass(frozen=True, eq=False)
class Mbts:
    upper: np.ndarray
    lower: np.ndarray

    def __post_init__(self):
        upper = np.asarray(self.upper, dtype=np.float64)
        lower = np.asarray(self.lower, dtype=np.float64)
        if upper.ndim != 1 or upper.shape != lower.shape:
            raise ValueError(
                f"envelope bounds must be 1-D of equal length, got {upper.shape} and {lower.shape}"
            )
        if np.any(lower > upper):
            raise ValueError("lower bound exceeds upper bound")
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "lower", lower)

    @property
    def length(self) -> int:
        return self.upper.shape[0]

    def __len__(self) -> int:
        return self.length

    def __eq__(self, other) -> bool:
        if not isinstance(other, Mbts):
            return NotImplemented
        return np.array_equal(self.upper, other.upper) and np.array_equal(self.lower, other.lower)

    def __hash__(self):
        return hash((self.upper.tobytes(), self.lower.tobytes()))

    def contains(self, s) -> bool:
        s = np.asarray(s, dtype=np.float64)
        return bool(np.all(s <= self.upper) and np.all(s >= self.lower))


def _check_len(s: np.ndarray, b: Mbts):
    if s.ndim != 1 or s.shape[0] != b.length:
        raise ValueError(f"length mismatch: sequence {s.shape} vs envelope {b.length}")


def mbts_of(sequences) -> Mbts:
    """Envelope of a non-empty set of equal-length sequences."""
    try:
        X = np.asarray(sequences, dtype=np.float64)
    except ValueError as e:
        raise ValueError("sequences must all have the same length") from e
    if X.ndim != 2:
        raise ValueError("sequences must all have the same length")
    if X.shape[0] == 0:
        raise ValueError("cannot bound an empty set of sequences")
    return Mbts(X.max(axis=0), X.min(axis=0))


def mbts_expand_with_sequence(b: Mbts, s) -> Mbts:
    s = np.asarray(s, dtype=np.float64)
    _check_len(s, b)
    return Mbts(np.maximum(b.upper, s), np.minimum(b.lower, s))


def mbts_merge(b1: Mbts, b2: Mbts) -> Mbts:
    if b1.length != b2.length:
        raise ValueError(f"length mismatch: {b1.length} != {b2.length}")
    return Mbts(np.maximum(b1.upper, b2.upper), np.minimum(b1.lower, b2.lower))


def dist_seq_mbts(s, b: Mbts, cutoff: float = math.inf) -> float:
    """Distance from a sequence to the band of an envelope.

    Zero when ``s`` lies inside the band.  With a finite ``cutoff`` the scan
    stops as soon as the running maximum exceeds it; the returned value is
    then only guaranteed to be greater than ``cutoff``.
    """
    s = np.asarray(s, dtype=np.float64)
    _check_len(s, b)
    if math.isinf(cutoff):
        return max(0.0, float(np.max(s - b.upper)), float(np.max(b.lower - s)))
    best = 0.0
    for i in range(0, s.shape[0], _CUTOFF_CHUNK):
        j = i + _CUTOFF_CHUNK
        d = max(float(np.max(s[i:j] - b.upper[i:j])), float(np.max(b.lower[i:j] - s[i:j])))
        if d > best:
            best = d
            if best > cutoff:
                return best
    return best


def dist_mbts_mbts(b1: Mbts, b2: Mbts, cutoff: float = math.inf) -> float:
    """Largest vertical gap between two bands; zero where they overlap."""
    if b1.length != b2.length:
        raise ValueError(f"length mismatch: {b1.length} != {b2.length}")
    if math.isinf(cutoff):
        return max(0.0, float(np.max(b1.lower - b2.upper)), float(np.max(b2.lower - b1.upper)))
    best = 0.0
    for i in range(0, b1.length, _CUTOFF_CHUNK):
        j = i + _CUTOFF_CHUNK
        d = max(float(np.max(b1.lower[i:j] - b2.upper[i:j])),
                float(np.max(b2.lower[i:j] - b1.upper[i:j])))
        if d > best:
            best = d
            if best > cutoff:
                return best
    return best


def dist_seq_envelopes(s: np.ndarray, uppers: np.ndarray, lowers: np.ndarray) -> np.ndarray:
    """Sequence-to-envelope distance against a stack of ``k`` envelopes at once."""
    d = np.maximum((s - uppers).max(axis=1), (lowers - s).max(axis=1))
    return np.maximum(d, 0.0)


def pairwise_envelope_gaps(uppers: np.ndarray, lowers: np.ndarray) -> np.ndarray:
    """``k x k`` matrix of envelope-to-envelope distances."""
    a = (lowers[:, None, :] - uppers[None, :, :]).max(axis=2)
    return np.maximum(np.maximum(a, a.T), 0.0)
