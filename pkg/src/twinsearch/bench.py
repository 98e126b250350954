"""Engine registry, cross-engine exactness checks and the benchmark sweep.

Report schema ``twinsearch-bench/1`` (one CSV row per engine and parameter
point):

=================  ==========================================================
schema             always ``twinsearch-bench/1``
engine             sweep | kv | isax | ts
axis               which parameter this point varies (default, epsilon, l, m)
mode               raw | zglobal | zsub
n                  series length
l                  window length
epsilon            distance threshold
m                  PAA segments (isax only, else empty)
mu_c, max_c        node capacities (ts only, else empty)
queries            timed queries
avg_ms, median_ms  wall-clock latency per query
avg_candidates     positions reaching verification
avg_nodes_visited  nodes passing the filter
avg_nodes_pruned   nodes discarded by the filter
result_count       total twins over the workload
result_crc         CRC-32 over every query's sorted result positions
build_s            index construction time (0 for sweep)
index_bytes        size of the serialized index file
live_bytes         node count x per-node cost + 8 bytes per stored entry
=================  ==========================================================
"""

from __future__ import annotations

import csv
import io
import statistics
import time
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from twinsearch._binio import IndexFormatError
from twinsearch.ingest import Workload, sample_workload
from twinsearch.isax import (
    DEFAULT_BASE_CARDINALITY,
    DEFAULT_LEAF_CAP,
    DEFAULT_MAX_CARDINALITY,
    DEFAULT_SEGMENTS,
    IsaxIndex,
)
from twinsearch.kvindex import KvIndex, UnsupportedModeError
from twinsearch.series import NormalizationMode, Query, SweeplineEngine, TimeSeries
from twinsearch.tsindex import DEFAULT_MAX_C, DEFAULT_MU_C, TsIndex

__all__ = [
    "ENGINES",
    "DEFAULT_EPSILONS",
    "DEFAULT_RAW_EPSILONS",
    "DEFAULT_EPSILON",
    "DEFAULT_LENGTHS",
    "DEFAULT_SEGMENT_GRID",
    "EngineParams",
    "build_engine",
    "load_index",
    "result_crc",
    "compare",
    "CompareReport",
    "BenchSpec",
    "run_bench",
    "SCHEMA",
    "FIELDS",
    "write_csv",
    "format_table",
]

ENGINES = ("sweep", "kv", "isax", "ts")
DEFAULT_EPSILONS = (0.1, 0.2, 0.3, 0.4, 0.5)
DEFAULT_EPSILON = 0.3
DEFAULT_RAW_EPSILONS = (20.0, 40.0, 60.0, 80.0, 100.0)
DEFAULT_RAW_EPSILON = 40.0
DEFAULT_LENGTHS = (50, 100, 150, 200, 250)
DEFAULT_LENGTH = 100
DEFAULT_SEGMENT_GRID = (5, 10, 20, 25, 50)
SCHEMA = "twinsearch-bench/1"
FIELDS = (
    "schema", "engine", "axis", "mode", "n", "l", "epsilon", "m", "mu_c", "max_c", "queries",
    "avg_ms", "median_ms", "avg_candidates", "avg_nodes_visited", "avg_nodes_pruned",
    "result_count", "result_crc", "build_s", "index_bytes", "live_bytes",
)

_LOADERS = {b"TSINDEX\0": TsIndex, b"KVINDEX\0": KvIndex, b"ISAXIDX\0": IsaxIndex}


@dataclass
class EngineParams:
    mu_c: int = DEFAULT_MU_C
    max_c: int = DEFAULT_MAX_C
    m: int = DEFAULT_SEGMENTS
    cardinality: int = DEFAULT_BASE_CARDINALITY
    max_cardinality: int = DEFAULT_MAX_CARDINALITY
    leaf_cap: int = DEFAULT_LEAF_CAP
    bucket_width: Optional[float] = None


def build_engine(name: str, series: TimeSeries, l: int, mode, params: EngineParams = None):
    params = params or EngineParams()
    mode = NormalizationMode.parse(mode)
    if name == "sweep":
        return SweeplineEngine(series, l, mode)
    if name == "ts":
        return TsIndex.build(series, l, params.mu_c, params.max_c, mode)
    if name == "kv":
        return KvIndex.build(series, l, params.bucket_width, mode)
    if name == "isax":
        return IsaxIndex.build(series, l, params.m, params.cardinality, params.leaf_cap, mode,
                               params.max_cardinality)
    raise ValueError(f"unknown engine {name!r}; expected one of {ENGINES}")


def load_index(data: bytes, series: TimeSeries):
    """Load any persisted index, dispatching on the file magic."""
    cls = _LOADERS.get(bytes(data[:8]))
    if cls is None:
        raise IndexFormatError(f"unrecognized index file magic {bytes(data[:8])!r}", 0)
    return cls.load(data, series)


def result_crc(results: Iterable[np.ndarray], crc: int = 0) -> int:
    for r in results:
        crc = zlib.crc32(np.asarray(r, dtype="<i8").tobytes(), crc)
        crc = zlib.crc32(b"|", crc)
    return crc & 0xFFFFFFFF


# -- exactness gate ---------------------------------------------------------


@dataclass
class Mismatch:
    engine: str
    l: int
    epsilon: float
    query: int
    position: int
    missing: List[int]
    extra: List[int]

    def __str__(self) -> str:
        return (f"engine={self.engine} l={self.l} epsilon={self.epsilon} query#{self.query} "
                f"(pos {self.position}): missing {self.missing[:10]} extra {self.extra[:10]}")


@dataclass
class CompareReport:
    rows: List[dict] = field(default_factory=list)
    mismatches: List[Mismatch] = field(default_factory=list)
    excluded: List[Tuple[str, int, str]] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.mismatches

    def format(self) -> str:
        lines = [f"{'engine':<6} {'l':>5} {'epsilon':>8} {'queries':>7} {'avg_cand':>10} "
                 f"{'results':>9}  status"]
        for r in self.rows:
            lines.append(f"{r['engine']:<6} {r['l']:>5} {r['epsilon']:>8g} {r['queries']:>7} "
                         f"{r['avg_candidates']:>10.1f} {r['result_count']:>9}  "
                         f"{'PASS' if r['passed'] else 'FAIL'}")
        for engine, l, why in self.excluded:
            lines.append(f"{engine:<6} {l:>5} excluded: {why}")
        for m in self.mismatches:
            lines.append(f"MISMATCH {m}")
        return "\n".join(lines)


def compare(series: TimeSeries, epsilons: Sequence[float], lengths: Sequence[int], mode,
            count: int = 100, seed: int = 0, params: EngineParams = None,
            engines: Sequence[str] = ENGINES, indexes: Dict[Tuple[str, int], object] = None
            ) -> CompareReport:
    """Run every engine over the cross-product and check each answer against sweepline.

    ``indexes`` may supply prebuilt engines keyed by ``(name, l)``.
    """
    mode = NormalizationMode.parse(mode)
    report = CompareReport()
    indexes = dict(indexes or {})
    for l in lengths:
        workload = sample_workload(series, count, l, seed, mode)
        built = {}
        for name in engines:
            if name == "sweep":
                continue
            if (name, l) in indexes:
                built[name] = indexes[(name, l)]
                continue
            try:
                built[name] = build_engine(name, series, l, mode, params)
            except UnsupportedModeError as e:
                report.excluded.append((name, l, str(e)))
        oracle = SweeplineEngine(series, l, mode)
        for eps in epsilons:
            truth = [oracle.search(Query(q, eps))[0] for q in workload.queries]
            for name, engine in built.items():
                cands = []
                ok = True
                results = []
                for i, (q, p) in enumerate(workload):
                    res, st = engine.search(Query(q, eps))
                    cands.append(st.candidates)
                    results.append(res)
                    if not np.array_equal(res, truth[i]):
                        ok = False
                        want, got = set(truth[i].tolist()), set(res.tolist())
                        report.mismatches.append(Mismatch(
                            name, l, eps, i, int(p), sorted(want - got), sorted(got - want)))
                report.rows.append({
                    "engine": name, "l": l, "epsilon": eps, "queries": len(workload),
                    "avg_candidates": float(np.mean(cands)) if cands else 0.0,
                    "result_count": int(sum(r.size for r in results)), "passed": ok,
                })
    return report


# -- benchmark --------------------------------------------------------------


@dataclass
class BenchSpec:
    """One-at-a-time sweep: the default point plus each axis varied alone."""

    epsilons: Sequence[float] = DEFAULT_EPSILONS
    lengths: Sequence[int] = DEFAULT_LENGTHS
    segments: Sequence[int] = DEFAULT_SEGMENT_GRID
    modes: Sequence[str] = ("zglobal",)
    default_epsilon: Optional[float] = None
    default_length: int = DEFAULT_LENGTH
    default_segments: int = DEFAULT_SEGMENTS
    engines: Sequence[str] = ENGINES
    count: int = 100
    warmup: int = 3
    seed: int = 0
    workers: int = 1
    params: EngineParams = field(default_factory=EngineParams)

    def points(self, mode: NormalizationMode) -> List[Tuple[str, float, int, int]]:
        eps0 = self.default_epsilon
        if eps0 is None:
            eps0 = DEFAULT_RAW_EPSILON if mode is NormalizationMode.RAW else DEFAULT_EPSILON
        pts = [("default", eps0, self.default_length, self.default_segments)]
        pts += [("epsilon", e, self.default_length, self.default_segments) for e in self.epsilons]
        pts += [("l", eps0, l, self.default_segments) for l in self.lengths]
        pts += [("m", eps0, self.default_length, m) for m in self.segments]
        seen, out = set(), []
        for axis, e, l, m in pts:
            if (e, l, m) not in seen:
                seen.add((e, l, m))
                out.append((axis, e, l, m))
        return out


class BenchExactnessError(RuntimeError):
    pass


def _timed_queries(engine, workload: Workload, eps: float, warmup: int, workers: int):
    queries = [Query(q, eps) for q in workload.queries]
    for q in queries[:warmup]:
        engine.search(q)

    def one(q):
        t0 = time.perf_counter()
        res, st = engine.search(q)
        return time.perf_counter() - t0, res, st

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(one, queries))
    return [one(q) for q in queries]


def run_bench(series: TimeSeries, spec: BenchSpec, log=None) -> List[dict]:
    """Run the sweep; raises :class:`BenchExactnessError` if engines disagree at any point."""
    rows: List[dict] = []
    for mode_name in spec.modes:
        mode = NormalizationMode.parse(mode_name)
        cache: Dict[tuple, Tuple[object, float]] = {}
        for axis, eps, l, m in spec.points(mode):
            workload = sample_workload(series, spec.count, l, spec.seed, mode)
            point_rows = []
            for name in spec.engines:
                if axis == "m" and name != "isax" and m != spec.default_segments:
                    continue
                key = (name, l, m if name == "isax" else None)
                if key not in cache:
                    params = EngineParams(**{**asdict(spec.params), "m": m})
                    t0 = time.perf_counter()
                    try:
                        engine = build_engine(name, series, l, mode, params)
                    except UnsupportedModeError as e:
                        if log:
                            log(f"skip {name} under {mode.value}: {e}")
                        cache[key] = (None, 0.0)
                        continue
                    cache[key] = (engine, time.perf_counter() - t0 if name != "sweep" else 0.0)
                engine, build_s = cache[key]
                if engine is None:
                    continue
                runs = _timed_queries(engine, workload, eps, spec.warmup, spec.workers)
                lat = [r[0] * 1000 for r in runs]
                stats = [r[2] for r in runs]
                index_bytes = len(engine.save()) if hasattr(engine, "save") else 0
                live_bytes = engine.live_bytes() if hasattr(engine, "live_bytes") else 0
                point_rows.append({
                    "schema": SCHEMA, "engine": name, "axis": axis, "mode": mode.value,
                    "n": series.n, "l": l, "epsilon": eps,
                    "m": m if name == "isax" else "",
                    "mu_c": spec.params.mu_c if name == "ts" else "",
                    "max_c": spec.params.max_c if name == "ts" else "",
                    "queries": len(runs),
                    "avg_ms": statistics.fmean(lat), "median_ms": statistics.median(lat),
                    "avg_candidates": statistics.fmean(s.candidates for s in stats),
                    "avg_nodes_visited": statistics.fmean(s.nodes_visited for s in stats),
                    "avg_nodes_pruned": statistics.fmean(s.nodes_pruned for s in stats),
                    "result_count": sum(s.results for s in stats),
                    "result_crc": result_crc(r[1] for r in runs),
                    "build_s": build_s, "index_bytes": index_bytes, "live_bytes": live_bytes,
                })
                if log:
                    r = point_rows[-1]
                    log(f"{mode.value} {axis}: {name} l={l} eps={eps:g} m={m} "
                        f"median={r['median_ms']:.2f}ms cand={r['avg_candidates']:.0f}")
            crcs = {r["result_crc"] for r in point_rows}
            if len(crcs) > 1:
                detail = ", ".join(f"{r['engine']}={r['result_count']}" for r in point_rows)
                raise BenchExactnessError(
                    f"engines disagree at mode={mode.value} l={l} epsilon={eps} m={m}: {detail}")
            rows.extend(point_rows)
    return rows


def write_csv(rows: List[dict], fh=None) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=FIELDS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (f"{v:.6g}" if isinstance(v, float) else v) for k, v in r.items()})
    text = buf.getvalue()
    if fh is not None:
        fh.write(text)
    return text


def format_table(rows: List[dict]) -> str:
    head = (f"{'mode':<7} {'axis':<8} {'engine':<6} {'l':>4} {'eps':>6} {'m':>3} "
            f"{'median_ms':>10} {'avg_cand':>10} {'results':>9} {'build_s':>8} {'index_kb':>9}")
    lines = [head, "-" * len(head)]
    for r in rows:
        lines.append(
            f"{r['mode']:<7} {r['axis']:<8} {r['engine']:<6} {r['l']:>4} {r['epsilon']:>6g} "
            f"{str(r['m']):>3} {r['median_ms']:>10.2f} {r['avg_candidates']:>10.0f} "
            f"{r['result_count']:>9} {r['build_s']:>8.2f} {r['index_bytes'] / 1024:>9.1f}")
    return "\n".join(lines)
