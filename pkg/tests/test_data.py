"""Dataset model tests: specs, normalization, resampling, windows, IO."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from causalgrad.data import (
    DataError,
    Dataset,
    Normalizer,
    VariableSpec,
    apply_normalizer,
    fit_normalizer,
    is_missing,
    load_dataset,
    make_windows,
    resample_series,
    save_dataset,
    window_count,
)


def ts_num(name, roles=("source", "target")):
    return VariableSpec(name, "ts-numerical", frozenset(roles))


def make_ds(series, **kw):
    specs = [ts_num(n) for n in series]
    return Dataset(specs, series=series, **kw)


# ---------------------------------------------------------------------------
# Variable specs and dataset construction
# ---------------------------------------------------------------------------


def test_spec_validation():
    with pytest.raises(DataError):
        VariableSpec("x", "weird-kind")
    with pytest.raises(DataError):
        VariableSpec("x", "ts-numerical", frozenset())
    with pytest.raises(DataError):
        VariableSpec("x", "ts-categorical")  # needs category_count
    with pytest.raises(DataError):
        VariableSpec("x", "ts-numerical", category_count=3)
    s = VariableSpec("x", "static-categorical", frozenset({"source"}), category_count=4)
    assert s.is_static and s.is_categorical and s.is_source and not s.is_target


def test_spec_json_round_trip():
    s = VariableSpec("load", "ts-categorical", frozenset({"target"}), category_count=3)
    assert VariableSpec.from_json(s.to_json()) == s


def test_dataset_rejects_mismatched_lengths():
    with pytest.raises(DataError):
        make_ds({"a": np.zeros(5), "b": np.zeros(6)})


def test_dataset_rejects_out_of_range_categories():
    specs = [VariableSpec("c", "ts-categorical", category_count=2)]
    with pytest.raises(DataError):
        Dataset(specs, series={"c": np.array([1.0, 2.0, 3.0])})
    ds = Dataset(specs, series={"c": np.array([1.0, np.nan, 2.0])})
    assert ds.length == 3


def test_dataset_static_and_series_access():
    specs = [ts_num("a"), VariableSpec("s", "static-numerical", frozenset({"source"}))]
    ds = Dataset(specs, series={"a": np.arange(4.0)}, static_values={"s": 2.5})
    assert ds.length == 4
    np.testing.assert_array_equal(ds.values("s"), [2.5])
    assert [v.name for v in ds.source_specs] == ["a", "s"]
    assert [v.name for v in ds.target_specs] == ["a"]


# ---------------------------------------------------------------------------
# Percentile normalization
# ---------------------------------------------------------------------------


def test_percentiles_of_0_to_100():
    ds = make_ds({"x": np.arange(101.0)})
    norm = fit_normalizer(ds)
    assert norm.p5["x"] == 5.0
    assert norm.p95["x"] == 95.0
    out = apply_normalizer(norm, ds)
    assert out.series["x"][50] == 0.5
    assert out.series["x"][5] == 0.0
    assert out.series["x"][95] == 1.0


def test_normalization_does_not_clamp():
    ds = make_ds({"x": np.arange(101.0)})
    norm = fit_normalizer(ds)
    out = apply_normalizer(norm, ds)
    assert out.series["x"][100] > 1.0
    assert out.series["x"][0] < 0.0


def test_normalizer_ignores_missing_and_preserves_it():
    vals = np.arange(101.0)
    vals[3] = np.nan
    ds = make_ds({"x": vals})
    norm = fit_normalizer(ds)
    out = apply_normalizer(norm, ds)
    assert np.isnan(out.series["x"][3])
    assert not np.any(np.isnan(np.delete(out.series["x"], 3)))


def test_degenerate_variable_warns_and_maps_to_half():
    ds = make_ds({"x": np.full(10, 7.0)})
    with pytest.warns(RuntimeWarning):
        norm = fit_normalizer(ds)
    assert norm.degenerate == {"x"}
    out = apply_normalizer(norm, ds)
    np.testing.assert_array_equal(out.series["x"], np.full(10, 0.5))
    back = norm.invert_values("x", out.series["x"])
    np.testing.assert_array_equal(back, np.full(10, 7.0))


def test_categorical_passes_through_normalization():
    specs = [ts_num("x"), VariableSpec("c", "ts-categorical", category_count=3)]
    ds = Dataset(specs, series={"x": np.arange(20.0), "c": np.ones(20)})
    out = apply_normalizer(fit_normalizer(ds), ds)
    np.testing.assert_array_equal(out.series["c"], np.ones(20))


def test_normalizer_requires_fitted_variable():
    norm = Normalizer()
    with pytest.raises(DataError):
        norm.normalize_values("nope", np.zeros(3))


def test_normalizer_json_round_trip():
    ds = make_ds({"x": np.arange(50.0), "y": np.arange(50.0) * 2 - 7})
    norm = fit_normalizer(ds)
    back = Normalizer.from_json(norm.to_json())
    assert back.p5 == norm.p5 and back.p95 == norm.p95


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=3, max_size=200), st.integers(0, 2 ** 31 - 1))
def test_invert_round_trips(values, seed):
    arr = np.asarray(values)
    ds = make_ds({"x": arr})
    with pytest.warns((RuntimeWarning,)) if len(set(values)) == 1 else _nullcontext():
        norm = fit_normalizer(ds)
    out = norm.normalize_values("x", arr)
    back = norm.invert_values("x", out)
    if "x" in norm.degenerate:
        np.testing.assert_array_equal(back, np.full_like(arr, norm.p5["x"]))
    else:
        np.testing.assert_allclose(back, arr, rtol=1e-12, atol=1e-12 * max(1, np.abs(arr).max()))


class _nullcontext:
    def __enter__(self):
        return self

    def __exit__(self, *a):
        return False


# ---------------------------------------------------------------------------
# Resampling
# ---------------------------------------------------------------------------


def test_same_rate_fills_interior_missing():
    out = resample_series([0.0, np.nan, 2.0], "ts-numerical", 1.0, 1.0)
    np.testing.assert_array_equal(out, [0.0, 1.0, 2.0])


def test_same_rate_copies_non_missing_exactly():
    vals = np.array([0.123456789012345, np.nan, 7.77, 3.3])
    out = resample_series(vals, "ts-numerical", 4.0, 4.0)
    assert out[0] == vals[0] and out[2] == vals[2] and out[3] == vals[3]
    assert out[1] == pytest.approx((vals[0] + vals[2]) / 2)


def test_leading_and_trailing_missing_stay_missing():
    vals = np.array([np.nan, 1.0, 2.0, np.nan])
    out = resample_series(vals, "ts-numerical", 1.0, 1.0)
    assert np.isnan(out[0]) and np.isnan(out[3])
    np.testing.assert_array_equal(out[1:3], [1.0, 2.0])


def test_downsample_picks_aligned_nodes_exactly():
    vals = np.arange(9.0) ** 2  # nonlinear so interpolation would differ
    out = resample_series(vals, "ts-numerical", 2.0, 1.0)
    np.testing.assert_array_equal(out, vals[::2])


def test_upsample_interpolates_midpoints():
    vals = np.array([0.0, 2.0, 6.0])
    out = resample_series(vals, "ts-numerical", 1.0, 2.0)
    np.testing.assert_array_equal(out, [0.0, 1.0, 2.0, 4.0, 6.0])


def test_categorical_takes_nearest_neighbor():
    vals = np.array([1.0, np.nan, 2.0])
    out = resample_series(vals, "ts-categorical", 1.0, 1.0)
    # the midpoint tie goes to the earlier sample
    np.testing.assert_array_equal(out, [1.0, 1.0, 2.0])
    up = resample_series(np.array([1.0, 3.0]), "ts-categorical", 1.0, 4.0)
    np.testing.assert_array_equal(up, [1.0, 1.0, 1.0, 3.0, 3.0])


def test_categorical_never_invents_values():
    rng = np.random.default_rng(3)
    vals = rng.integers(1, 4, size=50).astype(float)
    vals[rng.random(50) < 0.2] = np.nan
    out = resample_series(vals, "ts-categorical", 3.0, 2.0)
    present = out[~np.isnan(out)]
    assert set(np.unique(present)) <= {1.0, 2.0, 3.0}


def test_resample_rate_validation():
    with pytest.raises(DataError):
        resample_series([1.0], "ts-numerical", 0.0, 1.0)
    with pytest.raises(DataError):
        resample_series([], "ts-numerical", 1.0, 1.0)


def test_all_missing_stays_all_missing():
    out = resample_series([np.nan, np.nan], "ts-numerical", 1.0, 2.0)
    assert np.all(np.isnan(out))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.integers(2, 40))
def test_same_rate_no_missing_is_identity(seed, n):
    rng = np.random.default_rng(seed)
    vals = rng.normal(size=n)
    out = resample_series(vals, "ts-numerical", 5.0, 5.0)
    np.testing.assert_array_equal(out, vals)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.integers(3, 30), st.integers(1, 4), st.integers(1, 4))
def test_resampled_length_spans_the_duration(seed, n, r_src, r_tgt):
    rng = np.random.default_rng(seed)
    vals = rng.normal(size=n)
    out = resample_series(vals, "ts-numerical", float(r_src), float(r_tgt))
    duration = (n - 1) / r_src
    assert out.shape[0] == int(np.floor(duration * r_tgt + 1e-9)) + 1


# ---------------------------------------------------------------------------
# Windowing
# ---------------------------------------------------------------------------


def test_window_counts():
    assert window_count(12, 8, 1, 1) == 4
    assert window_count(9, 8, 1, 1) == 1
    assert window_count(1000, 8, 1, 1) == 992
    assert window_count(1000, 8, 1, 4) == 248


def test_window_too_short_raises():
    with pytest.raises(DataError):
        window_count(8, 8, 1, 1)
    ds = make_ds({"a": np.arange(8.0)})
    with pytest.raises(DataError):
        make_windows(ds, 8, 1)


def test_window_contents_and_no_leakage():
    ds = make_ds({"a": np.arange(12.0)})
    wins = make_windows(ds, 8, 1)
    assert len(wins) == 4
    for w, ex in enumerate(wins):
        np.testing.assert_array_equal(ex.inputs["a"], np.arange(w, w + 8.0))
        np.testing.assert_array_equal(ex.targets["a"], [w + 8.0])
        assert ex.target_start == ex.start + 8


def test_window_respects_roles():
    specs = [ts_num("src", roles=("source",)), ts_num("tgt", roles=("target",)),
             VariableSpec("s", "static-numerical", frozenset({"source"}))]
    ds = Dataset(specs, series={"src": np.arange(10.0), "tgt": np.arange(10.0) * 2},
                 static_values={"s": 4.0})
    wins = make_windows(ds, 8, 2)
    assert len(wins) == 1
    assert set(wins[0].inputs) == {"src", "s"}
    assert set(wins[0].targets) == {"tgt"}
    assert wins[0].inputs["s"] == 4.0
    np.testing.assert_array_equal(wins[0].targets["tgt"], [16.0, 18.0])


def test_window_stride():
    ds = make_ds({"a": np.arange(20.0)})
    wins = make_windows(ds, 8, 1, stride=3)
    assert [w.start for w in wins] == [0, 3, 6, 9]


@settings(max_examples=50, deadline=None)
@given(st.integers(9, 200), st.integers(1, 8), st.integers(1, 3), st.integers(1, 5))
def test_window_count_formula(length, s, s_j, stride):
    if length < s + s_j:
        with pytest.raises(DataError):
            window_count(length, s, s_j, stride)
        return
    ds = make_ds({"a": np.zeros(length)})
    wins = make_windows(ds, s, s_j, stride=stride)
    assert len(wins) == (length - s - s_j) // stride + 1
    last = wins[-1]
    assert last.start + s + s_j <= length
    # no later window would fit
    assert last.start + stride + s + s_j > length


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


def test_csv_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(11)
    x = rng.normal(size=30) * 1e8
    x[[2, 17]] = np.nan
    c = rng.integers(1, 5, 30).astype(float)
    c[5] = np.nan
    specs = [
        ts_num("x"),
        VariableSpec("c", "ts-categorical", frozenset({"source"}), category_count=4),
        VariableSpec("sn", "static-numerical", frozenset({"source"})),
        VariableSpec("sc", "static-categorical", frozenset({"source"}), category_count=2),
    ]
    ds = Dataset(specs, series={"x": x, "c": c}, static_values={"sn": 0.1 + 0.2, "sc": 2.0})
    save_dataset(ds, tmp_path / "d")
    back = load_dataset(tmp_path / "d")
    assert [s.name for s in back.specs] == ["x", "c", "sn", "sc"]
    assert back.by_name["c"].category_count == 4
    assert back.series["x"].tobytes() == x.tobytes()
    assert back.series["c"].tobytes() == c.tobytes()
    assert back.static_values["sn"] == 0.1 + 0.2
    assert back.static_values["sc"] == 2.0


def test_csv_missing_cells_are_empty(tmp_path):
    ds = make_ds({"x": np.array([1.5, np.nan])})
    save_dataset(ds, tmp_path / "d")
    lines = (tmp_path / "d" / "data.csv").read_text().splitlines()
    assert lines[0] == "x"
    assert lines[1] == "1.5"
    assert lines[2] == ""


def test_load_rejects_wrong_schema_tag(tmp_path):
    ds = make_ds({"x": np.arange(3.0)})
    save_dataset(ds, tmp_path / "d")
    sj = tmp_path / "d" / "schema.json"
    sj.write_text(sj.read_text().replace("causalgrad-dataset-v1", "other"))
    with pytest.raises(DataError):
        load_dataset(tmp_path / "d")


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(allow_nan=False, allow_infinity=False, width=64),
                min_size=2, max_size=40),
       st.integers(0, 2 ** 31 - 1))
def test_round_trip_arbitrary_floats(values, seed):
    import tempfile

    rng = np.random.default_rng(seed)
    arr = np.asarray(values)
    mask = rng.random(arr.size) < 0.25
    arr = np.where(mask, np.nan, arr)
    ds = make_ds({"v": arr})
    with tempfile.TemporaryDirectory() as td:
        save_dataset(ds, td)
        back = load_dataset(td)
    assert back.series["v"].tobytes() == arr.tobytes()
