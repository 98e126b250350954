"""Acceptance criteria, one test per criterion.

Each test logs a ``[criterion N] PASS/FAIL`` line (collected in the terminal
summary) before asserting.  Run alone with ``pytest -m acceptance -s``.
"""

import math
import statistics
import time

import numpy as np
import pytest

from twinsearch import bench
from twinsearch.ingest import generate, sample_workload
from twinsearch.isax import IsaxIndex
from twinsearch.kvindex import KvIndex, UnsupportedModeError
from twinsearch.series import NormalizationMode, Query, SweeplineEngine, chebyshev
from twinsearch.tsindex import TsIndex

pytestmark = pytest.mark.acceptance

N = 100_000
L = 100
QUERIES = 100
SEED = 0
EPSILONS = (0.1, 0.2, 0.3, 0.4, 0.5)
RAW_EPSILONS = bench.DEFAULT_RAW_EPSILONS
LENGTHS = (50, 100, 150, 200, 250)


@pytest.fixture(scope="session")
def walk():
    return generate("walk", N, seed=SEED)


@pytest.fixture(scope="session")
def workload(walk):
    return sample_workload(walk, QUERIES, L, seed=SEED, mode="zglobal")


@pytest.fixture(scope="session")
def engines(walk):
    return {
        "ts": TsIndex.build(walk, L),
        "kv": KvIndex.build(walk, L),
        "isax": IsaxIndex.build(walk, L),
    }


@pytest.fixture(scope="session")
def truth(walk, workload):
    sweep = SweeplineEngine(walk, L, "zglobal")
    return {eps: [sweep.search(Query(q, eps))[0] for q in workload.queries] for eps in EPSILONS}


def _mismatches(engine, queries, truth_by_eps):
    bad = []
    for eps, want in truth_by_eps.items():
        for i, q in enumerate(queries):
            got, _ = engine.search(Query(q, eps))
            if not np.array_equal(got, want[i]):
                bad.append((eps, i))
    return bad


def _euclid_sweep(view, q, threshold):
    hits = []
    for start in range(0, view.npos, 8192):
        stop = min(start + 8192, view.npos)
        d = np.sqrt(((view.block(start, stop) - q) ** 2).sum(axis=1))
        hits.append(np.flatnonzero(d <= threshold) + start)
    return np.concatenate(hits)


# -- 1 ----------------------------------------------------------------------------


def test_criterion_1_oracle_exactness(engines, workload, truth, record_criterion):
    total = sum(r.size for rs in truth.values() for r in rs)
    detail = []
    ok = True
    for name, engine in engines.items():
        bad = _mismatches(engine, workload.queries, truth)
        ok &= not bad
        detail.append(f"{name}: {len(bad)} mismatches")
    record_criterion(1, "ts/kv/isax set-identical to sweepline (n=100000, l=100, zglobal)", ok,
                     f"{'; '.join(detail)}; {total} twins over {QUERIES} queries x {len(EPSILONS)} eps")
    assert ok


# -- 2 ----------------------------------------------------------------------------


def test_criterion_2_pruning_soundness(record_criterion):
    T = generate("walk", 2_000, seed=SEED)
    wl = sample_workload(T, 20, 50, seed=SEED)
    violations = checked = pruned_nodes = 0
    for caps in ((10, 30), (2, 4)):
        idx = TsIndex.build(T, 50, *caps)
        view = idx.view
        for q in wl.queries:
            for eps in EPSILONS:
                pruned = []
                idx.search(Query(q, eps), pruned=pruned)
                pruned_nodes += len(pruned)
                for node in pruned:
                    for p in node.iter_positions():
                        checked += 1
                        if chebyshev(q, view.window(p)) <= eps:
                            violations += 1
    ok = violations == 0 and pruned_nodes > 0
    record_criterion(2, "no twin beneath any pruned node (n=2000, l=50, 20 queries)", ok,
                     f"{pruned_nodes} pruned nodes, {checked} windows brute-forced, "
                     f"{violations} violations")
    assert ok


# -- 3 ----------------------------------------------------------------------------


def test_criterion_3a_euclidean_bound(walk, workload, truth, record_criterion):
    view = walk.view("zglobal", L)
    worst = -math.inf
    pairs = 0
    for eps, results in truth.items():
        bound = eps * math.sqrt(L)
        for q, res in zip(workload.queries, results):
            if res.size:
                d = np.sqrt(((view.gather(res) - q) ** 2).sum(axis=1))
                worst = max(worst, float((d - bound).max()))
                pairs += res.size
    ok = worst <= 1e-9
    record_criterion("3a", "euclidean <= eps*sqrt(l) + 1e-9 for every twin pair", ok,
                     f"{pairs} pairs, max(euclid - eps*sqrt(l)) = {worst:.3g}")
    assert ok


def test_criterion_3b_euclidean_superset(walk, workload, truth, record_criterion):
    eps = bench.DEFAULT_EPSILON
    view = walk.view("zglobal", L)
    cheb_total = euc_total = 0
    subset = True
    for q, res in zip(workload.queries, truth[eps]):
        euc = _euclid_sweep(view, q, eps * math.sqrt(L))
        subset &= set(res.tolist()) <= set(euc.tolist())
        cheb_total += res.size
        euc_total += euc.size
    strict = subset and euc_total > cheb_total
    ratio = euc_total / cheb_total
    ok = strict and ratio >= 10
    record_criterion("3b", f"euclidean sweepline is a strict superset with >= 10x matches at eps={eps}",
                     ok, f"strict superset: {strict}; chebyshev {cheb_total}, euclidean {euc_total}, "
                         f"ratio {ratio:.2f}")
    assert strict
    assert ratio >= 10


# -- 4 ----------------------------------------------------------------------------


def test_criterion_4_structural_invariants(walk, engines, record_criterion):
    failures = []
    runs = 0
    for mu_c, max_c in ((2, 4), (2, 5), (10, 30)):
        for n in (101, 1_000, 100_000):
            if (mu_c, max_c, n) == (10, 30, N):
                idx = engines["ts"]
            else:
                T = walk if n == N else generate("walk", n, seed=SEED)
                idx = TsIndex.build(T, L, mu_c, max_c)
            runs += 1
            try:
                info = idx.audit()
                if info["positions"] != n - L + 1:
                    failures.append(f"({mu_c},{max_c}) n={n}: {info['positions']} positions")
            except AssertionError as e:
                failures.append(f"({mu_c},{max_c}) n={n}: {e}")
    ok = not failures
    record_criterion(4, "full audit passes for 3 capacity pairs x 3 series lengths", ok,
                     f"{runs} builds audited" + (f"; {failures}" if failures else ""))
    assert ok


# -- 5 ----------------------------------------------------------------------------


def test_criterion_5a_sweepline_flat_in_epsilon(walk, workload, record_criterion):
    sweep = SweeplineEngine(walk, L, "zglobal")
    times = {eps: [] for eps in EPSILONS}
    for q in workload.queries[:3]:
        sweep.search(Query(q, 0.3))
    # interleave epsilons per query, rotating the order, so drift hits all alike
    for i, q in enumerate(workload.queries):
        for k in range(len(EPSILONS)):
            eps = EPSILONS[(i + k) % len(EPSILONS)]
            t0 = time.perf_counter()
            sweep.search(Query(q, eps))
            times[eps].append(time.perf_counter() - t0)
    med = {eps: statistics.median(v) * 1000 for eps, v in times.items()}
    spread = (max(med.values()) - min(med.values())) / min(med.values())
    ok = spread < 0.10
    record_criterion("5a", "sweepline median latency varies < 10% across eps", ok,
                     "medians ms " + ", ".join(f"{e}: {m:.2f}" for e, m in med.items())
                     + f"; spread {spread:.1%}")
    assert ok


def test_criterion_5b_candidate_reduction(engines, workload, record_criterion):
    npos = N - L + 1
    cands = [engines["ts"].search(Query(q, 0.2))[1].candidates for q in workload.queries]
    avg = statistics.fmean(cands)
    ok = avg * 10 <= npos
    record_criterion("5b", "ts-index candidates <= (n-l+1)/10 at eps=0.2", ok,
                     f"avg candidates {avg:.0f} vs n-l+1 = {npos} ({npos / avg:.1f}x fewer)")
    assert ok


def test_criterion_5c_candidates_fall_with_length(walk, engines, record_criterion):
    eps = bench.DEFAULT_EPSILON
    avg = {}
    for l in LENGTHS:
        idx = engines["ts"] if l == L else TsIndex.build(walk, l)
        wl = sample_workload(walk, QUERIES, l, seed=SEED)
        avg[l] = statistics.fmean(idx.search(Query(q, eps))[1].candidates for q in wl.queries)
    seq = [avg[l] for l in LENGTHS]
    ok = all(b <= a for a, b in zip(seq, seq[1:]))
    record_criterion("5c", f"ts-index candidates non-increasing in l at eps={eps}", ok,
                     ", ".join(f"l={l}: {avg[l]:.0f}" for l in LENGTHS))
    assert ok


# -- 6 ----------------------------------------------------------------------------


def test_criterion_6_normalization_modes(walk, record_criterion):
    detail = []
    ok = True
    for mode, grid in ((NormalizationMode.RAW, RAW_EPSILONS),
                       (NormalizationMode.PER_SUBSEQ_Z, EPSILONS)):
        wl = sample_workload(walk, QUERIES, L, seed=SEED, mode=mode)
        sweep = SweeplineEngine(walk, L, mode)
        want = {eps: [sweep.search(Query(q, eps))[0] for q in wl.queries] for eps in grid}
        built = {"ts": TsIndex.build(walk, L, mode=mode), "isax": IsaxIndex.build(walk, L, mode=mode)}
        if mode is NormalizationMode.PER_SUBSEQ_Z:
            try:
                KvIndex.build(walk, L, mode=mode)
                ok = False
                detail.append("kv built under zsub without error")
            except UnsupportedModeError as e:
                detail.append(f"kv excluded under zsub ({e})")
        else:
            built["kv"] = KvIndex.build(walk, L, mode=mode)
        total = sum(r.size for rs in want.values() for r in rs)
        for name, engine in built.items():
            bad = _mismatches(engine, wl.queries, want)
            ok &= not bad
            detail.append(f"{mode.value}/{name}: {len(bad)} mismatches")
        detail.append(f"{mode.value}: {total} twins")
    record_criterion(6, "exactness under raw and zsub; kv rejected under zsub", ok,
                     "; ".join(detail))
    assert ok


# -- 7 ----------------------------------------------------------------------------


def test_criterion_7_persistence(walk, engines, workload, truth, record_criterion):
    detail = []
    ok = True
    for name, engine in engines.items():
        data = engine.save()
        again = bench.load_index(data, walk)
        same = again.same_structure(engine) and again.save() == data
        bad = _mismatches(again, workload.queries, {0.3: truth[0.3]})
        ok &= same and not bad
        detail.append(f"{name}: {len(data)} bytes, deep-equal {same}, {len(bad)} mismatches")
    record_criterion(7, "save/load round trip is deep-equal with identical results", ok,
                     "; ".join(detail))
    assert ok


# -- 8 ----------------------------------------------------------------------------


def test_criterion_8_determinism(walk, engines, workload, record_criterion):
    detail = []
    ok = True
    for name, engine in engines.items():
        again = bench.build_engine(name, walk, L, "zglobal")
        same_file = again.save() == engine.save()
        same_res = all(np.array_equal(again.search(Query(q, 0.3))[0], engine.search(Query(q, 0.3))[0])
                       for q in workload.queries)
        ok &= same_file and same_res
        detail.append(f"{name}: identical file {same_file}, identical results {same_res}")
    T = generate("walk", 20_000, seed=SEED)
    spec = bench.BenchSpec(count=QUERIES, warmup=2, seed=SEED)
    a = bench.run_bench(T, spec)
    b = bench.run_bench(generate("walk", 20_000, seed=SEED), spec)
    keys = ("engine", "axis", "l", "epsilon", "m", "result_count", "result_crc", "index_bytes")
    same_bench = [tuple(r[k] for k in keys) for r in a] == [tuple(r[k] for k in keys) for r in b]
    ok &= same_bench
    detail.append(f"two bench runs ({len(a)} rows, n=20000): identical crc/index sizes {same_bench}")
    record_criterion(8, "same seed gives identical result sets and index files", ok, "; ".join(detail))
    assert ok
