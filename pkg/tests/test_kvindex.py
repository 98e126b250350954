import numpy as np
import pytest

from twinsearch._binio import IndexFormatError
from twinsearch.ingest import generate, sample_workload
from twinsearch.kvindex import KvIndex, UnsupportedModeError, rolling_means
from twinsearch.series import Query, TimeSeries, chebyshev, sweepline_search


@pytest.fixture(scope="module")
def kv_walk(medium_walk):
    return KvIndex.build(medium_walk, 100)


def test_rolling_means_match_direct(rng):
    x = rng.normal(50, 20, size=3000).cumsum()
    means, err = rolling_means(x, 37)
    direct = np.array([np.mean(x[p:p + 37]) for p in range(x.shape[0] - 36)])
    assert np.max(np.abs(means - direct)) <= err


def test_constant_series_is_one_interval():
    T = TimeSeries(np.full(300, 2.5))
    idx = KvIndex.build(T, 20, 0.5, "raw")
    assert list(idx.table) == [5]
    assert idx.table[5].tolist() == [[0, 280]]


def test_increasing_series_small_buckets_are_singletons():
    T = TimeSeries(np.arange(200, dtype=float))
    idx = KvIndex.build(T, 10, 0.5, "raw")
    assert len(idx.table) == 191
    assert all(v.shape == (1, 2) and v[0, 0] == v[0, 1] for v in idx.table.values())


def test_every_position_sits_in_its_mean_bucket(kv_walk):
    view = kv_walk.view
    owner = np.full(view.npos, np.iinfo(np.int64).min)
    for key, iv in kv_walk.table.items():
        for s, e in iv:
            assert np.all(owner[s:e + 1] == np.iinfo(np.int64).min)
            owner[s:e + 1] = key
    w = kv_walk.bucket_width
    for p in range(0, view.npos, 97):
        mu = float(np.mean(view.window(p)))
        lo, hi = kv_walk.bucket_range(int(owner[p]))
        assert lo - kv_walk.slack <= mu < hi + kv_walk.slack
        assert abs(owner[p] - np.floor(mu / w)) <= 1


def test_candidate_examples():
    # window means 0.5, 1.5, ..., one per bucket of width 1
    T = TimeSeries(np.repeat(np.arange(10, dtype=float) + 0.5, 1))
    idx = KvIndex.build(T, 1, 1.0, "raw")
    assert idx.candidates(4.5, 0.2).tolist() == [4]
    assert idx.candidates(4.5, 1.0).tolist() == [3, 4, 5]
    # closed overlap: a boundary touch keeps the neighbour
    assert 5 in idx.candidates(4.0, 1.0).tolist()
    assert idx.candidates(100.0, 1.0).size == 0


def test_candidates_superset_of_twins(kv_walk, medium_walk):
    wl = sample_workload(medium_walk, 20, 100, seed=5)
    for q in wl.queries:
        for eps in (0.1, 0.3, 0.5):
            res = sweepline_search(medium_walk, Query(q, eps), "zglobal")
            cands = kv_walk.candidates(float(np.mean(q)), eps)
            assert set(res.tolist()) <= set(cands.tolist())


def test_candidates_monotone(medium_walk):
    wl = sample_workload(medium_walk, 5, 60, seed=6)
    fine = KvIndex.build(medium_walk, 60, 0.05)
    coarse = KvIndex.build(medium_walk, 60, 0.2)
    for q in wl.queries:
        mu = float(np.mean(q))
        a = set(fine.candidates(mu, 0.1).tolist())
        b = set(fine.candidates(mu, 0.3).tolist())
        assert a <= b
        # a coarser grid only ever adds candidates
        assert b <= set(coarse.candidates(mu, 0.3).tolist())


def test_mean_bound_on_twins(medium_walk, kv_walk):
    view = kv_walk.view
    q = view.window(4321)
    for p in sweepline_search(medium_walk, Query(q, 0.3), "zglobal"):
        s = view.window(int(p))
        assert chebyshev(q, s) <= 0.3
        assert abs(np.mean(q) - np.mean(s)) <= 0.3 + 1e-12


def test_per_window_normalization_unsupported(small_walk):
    with pytest.raises(UnsupportedModeError, match="mean"):
        KvIndex.build(small_walk, 50, mode="zsub")


def test_invalid_parameters(small_walk):
    with pytest.raises(ValueError):
        KvIndex.build(small_walk, 50, 0.0)
    with pytest.raises(ValueError):
        KvIndex.build(small_walk, small_walk.n + 1)


@pytest.mark.parametrize("mode,grid", [("zglobal", (0.1, 0.3, 0.5)), ("raw", (1.0, 5.0, 20.0))])
def test_exact_against_sweepline(medium_walk, mode, grid):
    idx = KvIndex.build(medium_walk, 80, mode=mode)
    for q in sample_workload(medium_walk, 15, 80, seed=9, mode=mode).queries:
        for eps in grid:
            res, stats = idx.search(Query(q, eps))
            assert np.array_equal(res, sweepline_search(medium_walk, Query(q, eps), mode))
            assert stats.candidates >= stats.results


def test_round_trip(kv_walk, medium_walk):
    data = kv_walk.save()
    again = KvIndex.load(data, medium_walk)
    assert again.same_structure(kv_walk)
    assert again.save() == data
    q = kv_walk.view.window(100)
    assert np.array_equal(again.search(Query(q, 0.2))[0], kv_walk.search(Query(q, 0.2))[0])


def test_load_rejects_damage(kv_walk, medium_walk):
    data = kv_walk.save()
    with pytest.raises(IndexFormatError):
        KvIndex.load(data[:-9], medium_walk)
    bad = bytearray(data)
    bad[70] ^= 1
    with pytest.raises(IndexFormatError):
        KvIndex.load(bytes(bad), medium_walk)
    with pytest.raises(IndexFormatError, match="magic"):
        KvIndex.load(b"XXXXXXXX" + data[8:], medium_walk)
    with pytest.raises(ValueError):
        KvIndex.load(data, generate("walk", medium_walk.n, seed=1))


def test_build_is_deterministic(medium_walk, kv_walk):
    assert KvIndex.build(medium_walk, 100).save() == kv_walk.save()
