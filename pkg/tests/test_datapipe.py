import datetime as dt

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flowcast.baselines import flatten_windows, ols_fit
from flowcast.datapipe import (
    DailyRecord,
    Schema,
    denormalize_target,
    find_gaps,
    fold_stats,
    format_schema,
    load_csv,
    load_schema,
    make_windows,
    normalize_apply,
    normalize_fit,
    parse_schema,
    records_to_arrays,
    repeated_splits,
    split_712,
    synth_generate,
    synth_schema,
    write_csv,
)
from flowcast.errors import DataError, SchemaError
from flowcast.metrics import relative_error
from flowcast.numcore import seeded_rng

SCHEMA = Schema(date="day", features=["rain", "tmax"], target="q")


def _write(path, rows, header="day,rain,tmax,q"):
    path.write_text(header + "\n" + "\n".join(rows) + "\n")
    return path


def test_load_well_formed(tmp_path):
    p = _write(tmp_path / "d.csv", ["2000-01-01,0.5,10,3.0", "2000-01-02,0,11,2.5", "2000-01-03,1.5,9.5,4"])
    recs = load_csv(p, SCHEMA)
    assert len(recs) == 3
    assert recs[0] == DailyRecord(dt.date(2000, 1, 1), (0.5, 10.0), 3.0)
    assert [r.date.day for r in recs] == [1, 2, 3]


def test_load_sorts_shuffled_rows(tmp_path):
    rows = ["2000-01-01,0.5,10,3.0", "2000-01-02,0,11,2.5", "2000-01-03,1.5,9.5,4"]
    a = load_csv(_write(tmp_path / "a.csv", rows), SCHEMA)
    b = load_csv(_write(tmp_path / "b.csv", [rows[2], rows[0], rows[1]]), SCHEMA)
    assert a == b


def test_load_column_order_free(tmp_path):
    p = _write(tmp_path / "d.csv", ["3.0,2000-01-01,10,0.5,x"], header="q,day,tmax,rain,extra")
    assert load_csv(p, SCHEMA)[0].features == (0.5, 10.0)


def test_duplicate_date_rejected(tmp_path):
    p = _write(tmp_path / "d.csv", ["2000-01-01,0.5,10,3.0", "2000-01-02,0,11,2.5", "2000-01-01,1,1,1"])
    with pytest.raises(DataError, match="2000-01-01"):
        load_csv(p, SCHEMA)


def test_missing_column_named(tmp_path):
    p = _write(tmp_path / "d.csv", ["2000-01-01,0.5,3.0"], header="day,rain,q")
    with pytest.raises(SchemaError, match="tmax"):
        load_csv(p, SCHEMA)


def test_unparseable_cell_located(tmp_path):
    p = _write(tmp_path / "d.csv", ["2000-01-01,0.5,10,3.0", "2000-01-02,abc,11,2.5"])
    with pytest.raises(DataError, match=r"row 3.*'rain'"):
        load_csv(p, SCHEMA)


def test_missing_values_listed_not_imputed(tmp_path):
    p = _write(tmp_path / "d.csv", ["2000-01-01,,10,3.0", "2000-01-02,0,11,NA", "2000-01-03,1,1,1"])
    with pytest.raises(DataError, match="2000-01-01.*2000-01-02"):
        load_csv(p, SCHEMA)


def test_gaps_reported(tmp_path, caplog):
    p = _write(tmp_path / "d.csv", ["2000-01-01,0.5,10,3.0", "2000-01-05,0,11,2.5"])
    recs = load_csv(p, SCHEMA)
    assert find_gaps(recs) == [(dt.date(2000, 1, 1), dt.date(2000, 1, 5))]
    assert "gap" in caplog.text


def test_schema_parse_and_round_trip(tmp_path):
    s = parse_schema("# comment\ndate = day\nfeatures = rain, tmax\ntarget = q\n")
    assert s == SCHEMA
    (tmp_path / "s.cfg").write_text(format_schema(s))
    assert load_schema(tmp_path / "s.cfg") == s
    with pytest.raises(SchemaError, match="target"):
        parse_schema("date = d\nfeatures = a\n")
    with pytest.raises(SchemaError):
        parse_schema("date = d\ntarget = q\n")


def test_normalize_hand_example():
    recs = [DailyRecord(dt.date(2000, 1, i + 1), (float(v),), float(v) + 10) for i, v in enumerate([1, 2, 3])]
    stats = normalize_fit(recs, [0, 1, 2])
    assert stats.feature_mean[0] == 2.0
    assert stats.feature_std[0] == pytest.approx(np.sqrt(2 / 3), rel=1e-15)
    z = [r.features[0] for r in normalize_apply(recs, stats)]
    np.testing.assert_allclose(z, [-1.224744871391589, 0.0, 1.224744871391589], rtol=1e-12)


def test_zero_variance_column_named():
    recs = [DailyRecord(dt.date(2000, 1, i + 1), (1.0, float(i)), float(i)) for i in range(5)]
    with pytest.raises(DataError, match="rain"):
        normalize_fit(recs, range(5), names=["rain", "tmax", "q"])


def test_denormalize_round_trip():
    recs = synth_generate(60, 3, 1)
    stats = normalize_fit(recs, range(0, 60, 2))
    z = [r.flow for r in normalize_apply(recs, stats)]
    back = denormalize_target(z, stats)
    assert np.abs(back - [r.flow for r in recs]).max() <= 1e-9


def test_stats_ignore_non_training_rows():
    recs = synth_generate(60, 2, 1)
    train = list(range(0, 40))
    a = normalize_fit(recs, train)
    changed = list(recs)
    changed[50] = DailyRecord(recs[50].date, (999.0, -999.0), 1e6)
    b = normalize_fit(changed, train)
    np.testing.assert_array_equal(a.feature_mean, b.feature_mean)
    np.testing.assert_array_equal(a.feature_std, b.feature_std)
    assert (a.target_mean, a.target_std) == (b.target_mean, b.target_std)


def test_fold_stats_use_only_training_targets():
    recs = synth_generate(200, 2, 4)
    ds = make_windows(recs, 7)
    split = split_712(ds, seeded_rng(0))
    stats = fold_stats(recs, ds, split)
    f, y = records_to_arrays(recs)
    days = ds.target_index[split.train]
    assert stats.target_mean == pytest.approx(y[days].mean(), rel=1e-14)
    # perturb a test-only target day: statistics unchanged
    test_day = ds.target_index[split.test[0]]
    assert test_day not in set(days)
    y2 = y.copy()
    y2[test_day] += 100.0
    again = fold_stats((f, y2), ds, split)
    assert (again.target_mean, again.target_std) == (stats.target_mean, stats.target_std)


def test_window_counts_and_alignment():
    recs = synth_generate(30, 2, 0)[:10]
    ds = make_windows(recs, 7)
    assert len(ds) == 3
    np.testing.assert_array_equal(ds.X[0], [r.features for r in recs[0:7]])
    assert ds.y[0] == recs[7].flow
    one = make_windows(recs, 1)
    assert len(one) == 9
    np.testing.assert_array_equal(one.X[4, 0], recs[4].features)
    assert one.y[4] == recs[5].flow
    with pytest.raises(ValueError):
        make_windows(recs, 10)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 20))
def test_window_count_law(lookback):
    recs = synth_generate(45, 2, 2)
    ds = make_windows(recs, lookback)
    assert len(ds) == 45 - lookback
    np.testing.assert_array_equal(ds.target_index, np.arange(lookback, 45))


def test_split_sizes():
    s = split_712(100, seeded_rng(0))
    assert (len(s.train), len(s.val), len(s.test)) == (70, 10, 20)
    s = split_712(10958, seeded_rng(0))
    assert (len(s.train), len(s.val), len(s.test)) == (7670, 1095, 2193)
    with pytest.raises(ValueError):
        split_712(9, seeded_rng(0))


@settings(max_examples=100, deadline=None)
@given(st.integers(10, 3000), st.integers(0, 2**32), st.booleans())
def test_split_partition(n, seed, chrono):
    s = split_712(n, seeded_rng(seed), chronological=chrono)
    parts = [set(s.train.tolist()), set(s.val.tolist()), set(s.test.tolist())]
    assert sum(len(p) for p in parts) == n
    assert parts[0] | parts[1] | parts[2] == set(range(n))
    assert not (parts[0] & parts[1] or parts[0] & parts[2] or parts[1] & parts[2])
    if chrono:
        assert s.train.max() < s.val.min() <= s.val.max() < s.test.min()


def test_repeated_splits():
    a = repeated_splits(500, 10, master_seed=3)
    b = repeated_splits(500, 10, master_seed=3)
    assert len(a) == 10
    assert [s.digest() for s in a] == [s.digest() for s in b]
    assert len({s.digest() for s in a}) > 1
    for s in a:
        assert len(s.train) + len(s.val) + len(s.test) == 500


def test_synthetic_series_contract():
    a = synth_generate(400, 4, 5)
    assert a == synth_generate(400, 4, 5)
    f, y = records_to_arrays(a)
    assert np.all(f[:, 0::2] >= 0) and np.all(y > 0) and np.all(np.isfinite(f))
    assert 0.05 < (f[:, 0] > 0).mean() < 0.6
    dates = [r.date for r in a]
    assert all((b - c).days == 1 for c, b in zip(dates, dates[1:]))


def test_noise_free_series_is_learnable_by_ols():
    recs = synth_generate(600, 2, 6, noise=0.0)
    ds = make_windows(recs, 7)
    s = split_712(ds, seeded_rng(1))
    m = ols_fit(flatten_windows(ds.X[s.train]), ds.y[s.train])
    err = relative_error(m.predict(flatten_windows(ds.X[s.test])), ds.y[s.test])
    assert err < 0.02


def test_csv_round_trip(tmp_path):
    recs = synth_generate(40, 3, 7)
    schema = synth_schema(3)
    assert schema.features == ["precip_1", "temp_1", "precip_2"]
    write_csv(recs, tmp_path / "s.csv", schema)
    assert load_csv(tmp_path / "s.csv", schema) == recs
