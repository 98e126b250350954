"""Command-line front end: ``twinsearch {build,query,compare,bench}``."""

from __future__ import annotations

import argparse
import json
import sys
import time
from typing import List, Optional

import numpy as np

from twinsearch import bench
from twinsearch._binio import IndexFormatError
from twinsearch.ingest import IngestError, SeriesSource, SourceKind, load_series
from twinsearch.kvindex import UnsupportedModeError
from twinsearch.series import NormalizationMode, Query, SweeplineEngine

EEG_SCALE_N = 1_801_999
DEFAULT_N = 100_000


class CliError(Exception):
    pass


def _log(msg: str):
    print(msg, file=sys.stderr)


def _add_series_args(p: argparse.ArgumentParser):
    g = p.add_argument_group("series source")
    g.add_argument("--series", metavar="PATH", help="series file; synthetic walk if omitted")
    g.add_argument("--format", choices=["text", "csv", "f64"],
                   help="file format (default: from extension)")
    g.add_argument("--column", type=int, default=0, help="0-based CSV column")
    g.add_argument("--skip-header", action="store_true", help="skip the first CSV row")
    g.add_argument("--generate", choices=["walk", "sine"], default="walk")
    g.add_argument("--n", type=int, default=None, help=f"synthetic length (default {DEFAULT_N})")
    g.add_argument("--eeg-scale", action="store_true",
                   help=f"synthetic length {EEG_SCALE_N} instead of the default")
    g.add_argument("--period", type=float, default=100.0, help="sine period")
    g.add_argument("--sigma", type=float, default=0.1, help="sine noise scale")
    g.add_argument("--seed", type=int, default=0, help="seed for generators and workloads")


def _add_engine_args(p: argparse.ArgumentParser):
    g = p.add_argument_group("engine parameters")
    g.add_argument("--mu-c", type=int, default=bench.EngineParams.mu_c)
    g.add_argument("--max-c", type=int, default=bench.EngineParams.max_c)
    g.add_argument("--m", type=int, default=bench.EngineParams.m, help="PAA segments")
    g.add_argument("--cardinality", type=int, default=bench.EngineParams.cardinality,
                   help="iSAX base cardinality")
    g.add_argument("--leaf-cap", type=int, default=bench.EngineParams.leaf_cap)
    g.add_argument("--bucket-width", type=float, default=None,
                   help="KV bucket width (default 0.1 normalized, range/1000 raw)")


def _series(args):
    if args.series:
        kind = {"text": SourceKind.TEXT_LINES, "csv": SourceKind.CSV_COLUMN,
                "f64": SourceKind.BINARY_F64}.get(args.format)
        if kind is None:
            src = SeriesSource.from_path(args.series, column=args.column,
                                         skip_header=args.skip_header)
        else:
            src = SeriesSource(kind, path=args.series, column=args.column,
                               skip_header=args.skip_header)
    else:
        n = args.n or (EEG_SCALE_N if args.eeg_scale else DEFAULT_N)
        params = {"period": args.period, "sigma": args.sigma} if args.generate == "sine" else {}
        src = SeriesSource(SourceKind.SYNTHETIC, generator=args.generate, n=n, seed=args.seed,
                           params=params)
    return load_series(src)


def _params(args) -> bench.EngineParams:
    return bench.EngineParams(mu_c=args.mu_c, max_c=args.max_c, m=args.m,
                              cardinality=args.cardinality, leaf_cap=args.leaf_cap,
                              bucket_width=args.bucket_width)


def cmd_build(args) -> int:
    if args.engine == "sweep":
        raise CliError("the sweep engine has no index to build")
    series = _series(args)
    mode = NormalizationMode.parse(args.mode)
    t0 = time.perf_counter()
    index = bench.build_engine(args.engine, series, args.l, mode, _params(args))
    build_s = time.perf_counter() - t0
    data = index.save()
    with open(args.out, "wb") as fh:
        fh.write(data)
    summary = dict(index.summary())
    summary.update(series=series.name, n=series.n, build_s=round(build_s, 4),
                   index_bytes=len(data), live_bytes=index.live_bytes(), out=args.out)
    if args.json:
        print(json.dumps(summary))
    else:
        for k, v in summary.items():
            print(f"{k}: {v}")
    return 0


def _read_query(path: str) -> np.ndarray:
    return load_series(SeriesSource.from_path(path)).values


def cmd_query(args) -> int:
    series = _series(args)
    if args.index:
        with open(args.index, "rb") as fh:
            engine = bench.load_index(fh.read(), series)
        l, mode = engine.l, engine.mode
    else:
        mode = NormalizationMode.parse(args.mode)
        l = args.l
        engine = None
    if args.query_pos is not None:
        if args.index is None and args.l is None:
            raise CliError("--l is required with --query-pos when no index is given")
        q = series.view(mode, l).window(args.query_pos)
    elif args.query:
        q = series.normalize_query(_read_query(args.query), mode)
    else:
        raise CliError("give --query PATH or --query-pos P")
    if engine is None:
        l = q.shape[0]
        name = args.engine or "sweep"
        engine = (SweeplineEngine(series, l, mode) if name == "sweep"
                  else bench.build_engine(name, series, l, mode, _params(args)))
    positions, stats = engine.search(Query(q, args.epsilon, mode))
    if args.json:
        print(json.dumps({"engine": engine.name, "mode": mode.value, "l": int(l),
                          "epsilon": args.epsilon, "positions": positions.tolist(),
                          "stats": stats.as_dict()}))
    else:
        for p in positions:
            print(int(p))
        print(f"# engine={engine.name} results={stats.results} candidates={stats.candidates} "
              f"nodes_visited={stats.nodes_visited} nodes_pruned={stats.nodes_pruned} "
              f"elapsed_ms={stats.elapsed * 1000:.3f}")
    return 0


def cmd_compare(args) -> int:
    series = _series(args)
    mode = NormalizationMode.parse(args.mode)
    eps = args.epsilon or (bench.DEFAULT_RAW_EPSILONS if mode is NormalizationMode.RAW
                           else bench.DEFAULT_EPSILONS)
    lengths = args.l or [bench.DEFAULT_LENGTH]
    indexes = {}
    for path in args.index or []:
        with open(path, "rb") as fh:
            idx = bench.load_index(fh.read(), series)
        indexes[(idx.name, idx.l)] = idx
    report = bench.compare(series, eps, lengths, mode, args.queries, args.seed, _params(args),
                           args.engines, indexes)
    print(report.format())
    if not report.passed:
        print(f"FAIL: {len(report.mismatches)} mismatching (query, epsilon, engine) triples",
              file=sys.stderr)
        return 1
    print("PASS: every engine matches sweepline")
    return 0


def cmd_bench(args) -> int:
    series = _series(args)
    spec = bench.BenchSpec(
        epsilons=args.epsilon or bench.DEFAULT_EPSILONS,
        lengths=args.l or bench.DEFAULT_LENGTHS,
        segments=args.m_grid or bench.DEFAULT_SEGMENT_GRID,
        modes=args.mode or ["zglobal"],
        default_epsilon=args.default_epsilon,
        engines=args.engines, count=args.queries, warmup=args.warmup, seed=args.seed,
        workers=args.workers, params=_params(args),
    )
    if args.mode and "raw" in args.mode and not args.epsilon:
        spec.epsilons = bench.DEFAULT_RAW_EPSILONS
    rows = bench.run_bench(series, spec, log=None if args.quiet else _log)
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            bench.write_csv(rows, fh)
    else:
        bench.write_csv(rows, sys.stdout)
    print(bench.format_table(rows), file=sys.stderr if not args.out else sys.stdout)
    return 0


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="twinsearch",
                                     description="Exact Chebyshev subsequence search.")
    sub = parser.add_subparsers(dest="command", required=True)
    modes = [m.value for m in NormalizationMode]

    p = sub.add_parser("build", help="build and save an index")
    _add_series_args(p)
    _add_engine_args(p)
    p.add_argument("--engine", choices=["kv", "isax", "ts", "sweep"], default="ts")
    p.add_argument("--l", type=int, default=bench.DEFAULT_LENGTH)
    p.add_argument("--mode", choices=modes, default="zglobal")
    p.add_argument("--out", required=True)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("query", help="search a series for twins of a query")
    _add_series_args(p)
    _add_engine_args(p)
    p.add_argument("--index", help="saved index (engine, l and mode are read from it)")
    p.add_argument("--engine", choices=bench.ENGINES, default=None,
                   help="engine when no index is given (default sweep)")
    p.add_argument("--l", type=int, default=None)
    p.add_argument("--mode", choices=modes, default="zglobal")
    p.add_argument("--query", help="query file, one value per line")
    p.add_argument("--query-pos", type=int, help="use the window at this position as the query")
    p.add_argument("--epsilon", type=float, default=bench.DEFAULT_EPSILON)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("compare", help="check every engine against sweepline")
    _add_series_args(p)
    _add_engine_args(p)
    p.add_argument("--epsilon", type=float, nargs="+")
    p.add_argument("--l", type=int, nargs="+")
    p.add_argument("--mode", choices=modes, default="zglobal")
    p.add_argument("--queries", type=int, default=100)
    p.add_argument("--engines", nargs="+", choices=bench.ENGINES, default=list(bench.ENGINES))
    p.add_argument("--index", nargs="+", help="saved indexes to check instead of rebuilding")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("bench", help="run the parameter sweep and emit a CSV report")
    _add_series_args(p)
    _add_engine_args(p)
    p.add_argument("--epsilon", type=float, nargs="+")
    p.add_argument("--default-epsilon", type=float)
    p.add_argument("--l", type=int, nargs="+")
    p.add_argument("--m-grid", type=int, nargs="+", help="PAA segment counts to sweep")
    p.add_argument("--mode", choices=modes, nargs="+")
    p.add_argument("--queries", type=int, default=100)
    p.add_argument("--warmup", type=int, default=3)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--engines", nargs="+", choices=bench.ENGINES, default=list(bench.ENGINES))
    p.add_argument("--out", help="CSV path (default stdout)")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = make_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CliError, IngestError, IndexFormatError, UnsupportedModeError, ValueError,
            OSError, bench.BenchExactnessError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1 if isinstance(e, bench.BenchExactnessError) else 2


if __name__ == "__main__":
    sys.exit(main())
