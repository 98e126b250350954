"""Loading series from files, synthetic generators and query workloads.

All randomness goes through ``numpy.random.default_rng(seed)`` (PCG64), so
a seed fixes a series or workload on every machine running the same numpy
bit-generator.
"""

from __future__ import annotations

import csv
import enum
import io
import math
import os
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from twinsearch.series import NormalizationMode, TimeSeries

__all__ = [
    "IngestError",
    "SourceKind",
    "SeriesSource",
    "load_series",
    "generate",
    "Workload",
    "sample_workload",
    "write_text",
    "write_csv",
    "write_f64",
]


class IngestError(ValueError):
    pass


class SourceKind(enum.Enum):
    TEXT_LINES = "text"
    CSV_COLUMN = "csv"
    BINARY_F64 = "f64"
    SYNTHETIC = "synthetic"


@dataclass
class SeriesSource:
    kind: SourceKind
    path: Optional[str] = None
    column: int = 0
    skip_header: bool = False
    generator: str = "walk"
    n: int = 100_000
    seed: int = 0
    params: dict = field(default_factory=dict)

    @classmethod
    def from_path(cls, path: str, **kw) -> "SeriesSource":
        ext = os.path.splitext(path)[1].lower()
        if ext == ".csv":
            kind = SourceKind.CSV_COLUMN
        elif ext in (".f64", ".bin"):
            kind = SourceKind.BINARY_F64
        else:
            kind = SourceKind.TEXT_LINES
        return cls(kind, path=path, **kw)


def _parse_value(text: str, where: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise IngestError(f"{where}: cannot parse {text.strip()!r} as a number") from None
    if not math.isfinite(v):
        raise IngestError(f"{where}: non-finite value {text.strip()!r}")
    return v


def _read_text(path: str) -> List[float]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            out.append(_parse_value(line, f"{path}:{lineno}"))
    return out


def _read_csv(path: str, column: int, skip_header: bool) -> List[float]:
    out = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if skip_header and lineno == 1:
                continue
            if not row or not any(cell.strip() for cell in row):
                continue
            if column >= len(row):
                raise IngestError(f"{path}:{lineno}: no column {column} (row has {len(row)})")
            out.append(_parse_value(row[column], f"{path}:{lineno}"))
    return out


def _read_f64(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) % 8:
        raise IngestError(f"{path}: size {len(raw)} is not a multiple of 8 (offset {len(raw) - len(raw) % 8})")
    a = np.frombuffer(raw, dtype="<f8").astype(np.float64)
    bad = np.flatnonzero(~np.isfinite(a))
    if bad.size:
        raise IngestError(f"{path}: non-finite value at byte offset {bad[0] * 8}")
    return a


def load_series(source: SeriesSource) -> TimeSeries:
    if source.kind is SourceKind.SYNTHETIC:
        return generate(source.generator, source.n, source.seed, **source.params)
    path = source.path
    if source.kind is SourceKind.TEXT_LINES:
        values = _read_text(path)
    elif source.kind is SourceKind.CSV_COLUMN:
        values = _read_csv(path, source.column, source.skip_header)
    elif source.kind is SourceKind.BINARY_F64:
        values = _read_f64(path)
    else:
        raise IngestError(f"unsupported source kind {source.kind}")
    if len(values) == 0:
        raise IngestError(f"{path}: no values found")
    return TimeSeries(values, name=os.path.basename(path))


def generate(kind: str, n: int, seed: int = 0, period: float = 100.0,
             sigma: float = 0.1) -> TimeSeries:
    """Synthetic series.

    ``walk``: cumulative sum of standard normal steps.
    ``sine``: ``sin(2*pi*i/period)`` plus normal noise of scale ``sigma``.
    """
    kind = kind.lower().replace("-", "_")
    if n < 1:
        raise ValueError(f"series length must be positive, got {n}")
    rng = np.random.default_rng(seed)
    if kind in ("walk", "random_walk"):
        return TimeSeries(rng.standard_normal(n).cumsum(), name=f"walk-n{n}-s{seed}")
    if kind in ("sine", "sine_noise"):
        if not period > 0:
            raise ValueError(f"period must be positive, got {period}")
        if sigma < 0:
            raise ValueError(f"noise sigma must be non-negative, got {sigma}")
        i = np.arange(n)
        values = np.sin(2 * np.pi * i / period)
        if sigma > 0:
            values = values + rng.normal(0.0, sigma, n)
        return TimeSeries(values, name=f"sine-n{n}-s{seed}")
    raise ValueError(f"unknown generator {kind!r}; expected 'walk' or 'sine'")


@dataclass
class Workload:
    queries: List[np.ndarray]
    positions: np.ndarray
    seed: int
    l: int
    mode: NormalizationMode

    def __len__(self) -> int:
        return len(self.queries)

    def __iter__(self):
        return iter(zip(self.queries, self.positions))


def sample_workload(T: TimeSeries, count: int, l: int, seed: int = 0,
                    mode=NormalizationMode.GLOBAL_Z) -> Workload:
    """``count`` distinct windows drawn uniformly, materialized under ``mode``."""
    if l > T.n:
        raise ValueError(f"subsequence length {l} exceeds series length {T.n}")
    npos = T.n - l + 1
    if count > npos:
        raise ValueError(f"cannot draw {count} distinct queries from {npos} positions")
    rng = np.random.default_rng(seed)
    positions = rng.choice(npos, size=count, replace=False).astype(np.int64)
    view = T.view(mode, l)
    return Workload([view.window(int(p)) for p in positions], positions, seed, l,
                    NormalizationMode.parse(mode))


def write_text(path: str, values):
    with open(path, "w", encoding="utf-8") as fh:
        for v in np.asarray(values, dtype=np.float64):
            fh.write(f"{float(v)!r}\n")


def write_csv(path: str, values, column: int = 0, header: Optional[List[str]] = None):
    """Write ``values`` into ``column`` of a CSV; other columns hold the row number."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if header is not None:
        w.writerow(header)
    for i, v in enumerate(np.asarray(values, dtype=np.float64)):
        row = [str(i)] * (column + 1)
        row[column] = repr(float(v))
        w.writerow(row)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())


def write_f64(path: str, values):
    with open(path, "wb") as fh:
        fh.write(np.asarray(values, dtype="<f8").tobytes())
