import numpy as np
import pytest

from twinsearch.ingest import (
    IngestError,
    SeriesSource,
    SourceKind,
    generate,
    load_series,
    sample_workload,
    write_csv,
    write_f64,
    write_text,
)


@pytest.fixture
def values(rng):
    return rng.normal(size=500).cumsum()


def test_text_round_trip(tmp_path, values):
    path = str(tmp_path / "s.txt")
    write_text(path, values)
    T = load_series(SeriesSource.from_path(path))
    assert np.array_equal(T.values, values)


def test_csv_round_trip(tmp_path, values):
    path = str(tmp_path / "s.csv")
    write_csv(path, values, column=2, header=["a", "b", "value"])
    T = load_series(SeriesSource.from_path(path, column=2, skip_header=True))
    assert np.array_equal(T.values, values)
    with pytest.raises(IngestError, match=":1"):
        load_series(SeriesSource.from_path(path, column=2))
    with pytest.raises(IngestError, match="no column 5"):
        load_series(SeriesSource.from_path(path, column=5, skip_header=True))


def test_f64_round_trip(tmp_path, values):
    path = str(tmp_path / "s.f64")
    write_f64(path, values)
    src = SeriesSource.from_path(path)
    assert src.kind is SourceKind.BINARY_F64
    assert np.array_equal(load_series(src).values, values)


def test_f64_rejects_partial_and_nan(tmp_path):
    path = tmp_path / "bad.f64"
    path.write_bytes(np.array([1.0, 2.0]).tobytes() + b"\x00\x01")
    with pytest.raises(IngestError, match="multiple of 8"):
        load_series(SeriesSource.from_path(str(path)))
    path.write_bytes(np.array([1.0, np.nan, 3.0]).tobytes())
    with pytest.raises(IngestError, match="offset 8"):
        load_series(SeriesSource.from_path(str(path)))


def test_text_errors_carry_line_numbers(tmp_path):
    path = tmp_path / "s.txt"
    path.write_text("1.0\n2.0\nnan\n4.0\n")
    with pytest.raises(IngestError, match=":3"):
        load_series(SeriesSource.from_path(str(path)))
    path.write_text("1.0\nabc\n")
    with pytest.raises(IngestError, match=":2"):
        load_series(SeriesSource.from_path(str(path)))


def test_empty_file_is_an_error(tmp_path):
    path = tmp_path / "empty.txt"
    path.write_text("\n\n")
    with pytest.raises(IngestError, match="no values"):
        load_series(SeriesSource.from_path(str(path)))


def test_missing_file(tmp_path):
    with pytest.raises(OSError):
        load_series(SeriesSource.from_path(str(tmp_path / "missing.txt")))


def test_generators_are_deterministic():
    a = generate("walk", 1000, seed=3)
    b = generate("walk", 1000, seed=3)
    assert np.array_equal(a.values, b.values)
    assert not np.array_equal(a.values, generate("walk", 1000, seed=4).values)
    assert np.array_equal(generate("sine", 300, seed=1).values, generate("sine", 300, seed=1).values)


def test_walk_steps_are_standard_normal():
    steps = np.diff(generate("walk", 200_000, seed=0).values)
    assert abs(steps.mean()) < 0.01
    assert abs(steps.std() - 1) < 0.01


def test_sine_generator():
    clean = generate("sine", 1000, period=100, sigma=0.0)
    assert np.all(np.abs(clean.values) <= 1)
    assert np.allclose(clean.values[:100], clean.values[100:200])
    noisy = generate("sine", 100_000, seed=2, period=100, sigma=0.5)
    resid = noisy.values - np.sin(2 * np.pi * np.arange(100_000) / 100)
    assert abs(resid.std() - 0.5) < 0.01


def test_generator_errors():
    with pytest.raises(ValueError):
        generate("walk", 0)
    with pytest.raises(ValueError):
        generate("noise", 10)
    with pytest.raises(ValueError):
        generate("sine", 10, sigma=-1)


def test_workload_sampling(small_walk):
    l = 50
    npos = small_walk.n - l + 1
    wl = sample_workload(small_walk, 30, l, seed=5)
    assert len(wl) == 30
    assert len(set(wl.positions.tolist())) == 30
    view = small_walk.view("zglobal", l)
    for q, p in wl:
        assert np.array_equal(q, view.window(int(p)))
    again = sample_workload(small_walk, 30, l, seed=5)
    assert np.array_equal(wl.positions, again.positions)
    full = sample_workload(small_walk, npos, l, seed=1)
    assert sorted(full.positions.tolist()) == list(range(npos))
    with pytest.raises(ValueError):
        sample_workload(small_walk, npos + 1, l)
