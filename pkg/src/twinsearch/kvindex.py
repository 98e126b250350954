"""Mean-value inverted index.

Windows are keyed by the bucket ``floor(mean / w)`` of their mean; each
bucket lists maximal runs of consecutive positions as ``[start, end]``
intervals.  Two twins at threshold ``epsilon`` have means at most
``epsilon`` apart, so probing every bucket within ``epsilon`` of the query
mean yields a superset of the answer, which is then verified.

File layout (little-endian, version 1)::

    header   8s magic b"KVINDEX\\0", H version, I l, B mode code,
             Q n, Q series fingerprint, d bucket width, d mean slack,
             Q bucket count
    buckets  ascending by id; q bucket id, I interval count k, k*(Q start, Q end)
    trailer  I CRC-32
"""

from __future__ import annotations

import math
import struct
import time
from typing import Dict, Optional

import numpy as np

from twinsearch._binio import IndexFormatError, Reader, seal, unseal
from twinsearch.series import (
    NormalizationMode,
    Query,
    SearchStats,
    TimeSeries,
    verify_positions,
)

__all__ = ["KvIndex", "UnsupportedModeError", "rolling_means", "default_bucket_width"]

MAGIC = b"KVINDEX\0"
VERSION = 1
_HEADER = struct.Struct("<8sHIBQQddQ")
_BUCKET = struct.Struct("<qI")
# bookkeeping bytes charged per bucket in the live-size estimate
BUCKET_OVERHEAD = 32


class UnsupportedModeError(ValueError):
    pass


def rolling_means(values: np.ndarray, l: int):
    """Means of all length-``l`` windows via one prefix sum.

    Returns ``(means, err)`` where ``err`` bounds the absolute rounding error
    of each mean.
    """
    values = np.asarray(values, dtype=np.float64)
    shift = float(values.mean())
    c = np.empty(values.shape[0] + 1)
    c[0] = 0.0
    np.cumsum(values - shift, out=c[1:])
    means = (c[l:] - c[:-l]) / l + shift
    # prefix-sum rounding grows at most linearly in n
    scale = float(np.abs(c).max()) + float(np.abs(values - shift).sum())
    err = 4 * np.finfo(np.float64).eps * (values.shape[0] * scale / l + abs(shift) + 1.0)
    return means, err


def default_bucket_width(series: TimeSeries, mode) -> float:
    mode = NormalizationMode.parse(mode)
    if mode is NormalizationMode.RAW:
        rng = float(series.values.max() - series.values.min())
        return rng / 1000 if rng > 0 else 1.0
    return 0.1


class KvIndex:
    name = "kv"

    def __init__(self, series: TimeSeries, l: int, bucket_width: float, mode, slack: float):
        self.series = series
        self.l = int(l)
        self.bucket_width = float(bucket_width)
        self.mode = NormalizationMode.parse(mode)
        self.slack = float(slack)
        self.view = series.view(self.mode, self.l)
        self.table: Dict[int, np.ndarray] = {}
        self._keys = np.empty(0, dtype=np.int64)

    @classmethod
    def build(cls, series: TimeSeries, l: int, bucket_width: Optional[float] = None,
              mode=NormalizationMode.GLOBAL_Z) -> "KvIndex":
        mode = NormalizationMode.parse(mode)
        if mode is NormalizationMode.PER_SUBSEQ_Z:
            raise UnsupportedModeError(
                "KV index cannot be built on per-subsequence z-normalized data: "
                "every window mean is zero"
            )
        if l < 1 or l > series.n:
            raise ValueError(f"subsequence length {l} must be in [1, {series.n}]")
        if bucket_width is None:
            bucket_width = default_bucket_width(series, mode)
        if not bucket_width > 0 or not math.isfinite(bucket_width):
            raise ValueError(f"bucket width must be positive, got {bucket_width}")
        view = series.view(mode, l)
        means, err = rolling_means(view.base, l)
        index = cls(series, l, bucket_width, mode, err)
        buckets = np.floor(means / bucket_width).astype(np.int64)
        # runs of equal bucket id become intervals
        starts = np.flatnonzero(np.r_[True, buckets[1:] != buckets[:-1]])
        ends = np.r_[starts[1:] - 1, buckets.shape[0] - 1]
        run_ids = buckets[starts]
        order = np.argsort(run_ids, kind="stable")
        run_ids, starts, ends = run_ids[order], starts[order], ends[order]
        keys, first = np.unique(run_ids, return_index=True)
        bounds = np.r_[first, run_ids.shape[0]]
        for i, key in enumerate(keys):
            sl = slice(bounds[i], bounds[i + 1])
            index.table[int(key)] = np.stack([starts[sl], ends[sl]], axis=1)
        index._keys = keys.astype(np.int64)
        return index

    def bucket_range(self, key: int):
        return key * self.bucket_width, (key + 1) * self.bucket_width

    def candidates(self, mu_q: float, epsilon: float) -> np.ndarray:
        """Positions of every bucket whose closed range meets
        ``[mu_q - epsilon, mu_q + epsilon]``, in ascending bucket order."""
        lo = mu_q - epsilon - self.slack
        hi = mu_q + epsilon + self.slack
        kmin = math.floor(lo / self.bucket_width) - 1
        kmax = math.floor(hi / self.bucket_width)
        a = np.searchsorted(self._keys, kmin, side="left")
        b = np.searchsorted(self._keys, kmax, side="right")
        parts = []
        for key in self._keys[a:b]:
            klo, khi = self.bucket_range(int(key))
            if khi < lo or klo > hi:
                continue
            for s, e in self.table[int(key)]:
                parts.append(np.arange(s, e + 1, dtype=np.int64))
        return np.concatenate(parts) if parts else np.empty(0, dtype=np.int64)

    def search(self, query: Query):
        if query.l != self.l:
            raise ValueError(f"query length {query.l} != indexed length {self.l}")
        if query.mode is not None and query.mode is not self.mode:
            raise ValueError(f"query mode {query.mode.value} != index mode {self.mode.value}")
        t0 = time.perf_counter()
        q = query.values
        mu_q = float(np.mean(q))
        stats = SearchStats()
        # rounding in the query mean is bounded like a plain l-term sum
        pad = 2 * self.l * np.finfo(np.float64).eps * (float(np.abs(q).max()) + 1.0)
        cands = self.candidates(mu_q, query.epsilon + pad)
        stats.candidates = int(cands.size)
        res = verify_positions(self.view, q, cands, query.epsilon)
        res.sort()
        stats.results = int(res.size)
        stats.elapsed = time.perf_counter() - t0
        return res, stats

    # -- inspection --------------------------------------------------------

    @property
    def interval_count(self) -> int:
        return sum(v.shape[0] for v in self.table.values())

    def live_bytes(self) -> int:
        return len(self.table) * BUCKET_OVERHEAD + 16 * self.interval_count

    def summary(self) -> dict:
        return {"engine": self.name, "l": self.l, "mode": self.mode.value,
                "bucket_width": self.bucket_width, "buckets": len(self.table),
                "intervals": self.interval_count}

    def same_structure(self, other: "KvIndex") -> bool:
        if (self.l, self.mode, self.bucket_width) != (other.l, other.mode, other.bucket_width):
            return False
        if self.table.keys() != other.table.keys():
            return False
        return all(np.array_equal(v, other.table[k]) for k, v in self.table.items())

    # -- persistence -------------------------------------------------------

    def save(self) -> bytes:
        out = [_HEADER.pack(MAGIC, VERSION, self.l, self.mode.code, self.series.n,
                            self.series.fingerprint, self.bucket_width, self.slack,
                            len(self.table))]
        for key in self._keys:
            iv = self.table[int(key)]
            out.append(_BUCKET.pack(int(key), iv.shape[0]))
            out.append(iv.astype("<u8").tobytes())
        return seal(b"".join(out))

    @classmethod
    def load(cls, data: bytes, series: TimeSeries) -> "KvIndex":
        payload = unseal(data, MAGIC, VERSION)
        r = Reader(payload)
        _, _, l, mode_code, n, fp, width, slack, nbuckets = r.unpack(_HEADER.format)
        if n != series.n or fp != series.fingerprint:
            raise ValueError("index file was built on a different series")
        try:
            index = cls(series, l, width, NormalizationMode.from_code(mode_code), slack)
        except ValueError as e:
            raise IndexFormatError(f"invalid header: {e}", 0) from e
        npos = index.view.npos
        seen = 0
        prev = None
        for _ in range(nbuckets):
            off = r.offset
            key, k = r.unpack(_BUCKET.format)
            if prev is not None and key <= prev:
                raise IndexFormatError("bucket ids not strictly ascending", off)
            iv = r.array("<u8", 2 * k).astype(np.int64).reshape(k, 2)
            if k == 0 or np.any(iv[:, 0] > iv[:, 1]) or np.any(iv[:, 1] >= npos):
                raise IndexFormatError("invalid interval list", off)
            index.table[key] = iv
            seen += int((iv[:, 1] - iv[:, 0] + 1).sum())
            prev = key
        if r.offset != len(payload):
            raise IndexFormatError("trailing bytes after last bucket", r.offset)
        if seen != npos:
            raise IndexFormatError(f"intervals cover {seen} positions, expected {npos}", r.offset)
        index._keys = np.array(sorted(index.table), dtype=np.int64)
        return index
