import io
import warnings

import numpy as np
import pytest

from pissm.features import (
    FEATURES,
    INTERPOLATED,
    MISSING,
    OBSERVED,
    RADIATIVE,
    RAW_FIELDS,
    IngestError,
    NormStats,
    RawRows,
    SchemaError,
    SplitSpec,
    Timeline,
    apply_night_mask,
    apply_norm,
    bridge_gaps,
    build_samples,
    chronological_split,
    clean_align,
    derive_features,
    fit_norm_stats,
    ingest,
    load_dataset,
    prepare,
    prepare_timeline,
    read_csv,
    save_dataset,
    window_inputs,
    write_csv,
)
from pissm.cli import fixture_path
from pissm.hankel import HankelSpec
from pissm.solar import SiteConfig
from pissm.synthetic import synthetic_rows

SITE = SiteConfig()
HEADER = "timestamp,ghi,dni,dhi,t2m,rh2m,ws10m,ps\n"


def rows_from(ghi, start="2021-03-01T06"):
    n = len(ghi)
    t = np.datetime64(start, "h") + np.arange(n).astype("timedelta64[h]")
    vals = {k: np.full(n, 1.0) for k in ("dni", "dhi", "t2m", "rh2m", "ws10m", "ps")}
    vals["ghi"] = np.asarray(ghi, dtype=float)
    return RawRows(t, vals)


class TestIngest:
    def test_fill_value_and_empty_cells(self):
        text = HEADER + "2021-01-01T00:00:00Z,-999,1,2,3,4,5,6\n2021-01-01T01:00:00Z,,1,2,3,4,5,6\n"
        rows = read_csv(io.StringIO(text))
        assert np.isnan(rows.values["ghi"]).all()
        assert rows.values["ps"][0] == 6.0

    def test_unknown_column(self):
        with pytest.raises(SchemaError):
            read_csv(io.StringIO("timestamp,ghi,dni,dhi,t2m,rh2m,ws10m,ps,extra\n"))

    def test_missing_column(self):
        with pytest.raises(SchemaError):
            read_csv(io.StringIO("timestamp,ghi\n"))

    def test_bad_row_reports_line(self):
        with pytest.raises(IngestError, match="line 3"):
            read_csv(io.StringIO(HEADER + "2021-01-01T00:00:00Z,1,1,1,1,1,1,1\nnot-a-time,1,1,1,1,1,1,1\n"))

    def test_non_utc_rejected(self):
        with pytest.raises(IngestError):
            read_csv(io.StringIO(HEADER + "2021-01-01T00:00:00+02:00,1,1,1,1,1,1,1\n"))

    def test_roundtrip_24_rows(self, tmp_path):
        rows = synthetic_rows("2021-05-01T00", 24, seed=1)
        write_csv(rows, tmp_path / "x.csv")
        back = ingest(tmp_path / "x.csv")
        assert len(back) == 24
        np.testing.assert_array_equal(back.timestamps, rows.timestamps)
        np.testing.assert_allclose(back.values["ghi"], rows.values["ghi"], atol=1e-4)

    def test_duplicates_retained_at_ingest(self):
        text = HEADER + "2021-01-01T00:00:00Z,1,1,1,1,1,1,1\n2021-01-01T00:00:00Z,2,1,1,1,1,1,1\n"
        assert len(read_csv(io.StringIO(text))) == 2

    def test_directory_and_missing(self, tmp_path):
        write_csv(synthetic_rows("2021-01-01T00", 5), tmp_path / "a.csv")
        write_csv(synthetic_rows("2021-01-01T05", 5), tmp_path / "b.csv")
        assert len(ingest(tmp_path)) == 10
        with pytest.raises(IngestError):
            ingest(tmp_path / "nope.csv")
        (tmp_path / "empty").mkdir()
        with pytest.raises(IngestError):
            ingest(tmp_path / "empty")


class TestCleanAlign:
    def test_midpoint_interpolation(self):
        tl = clean_align(rows_from([100.0, np.nan, 300.0]))
        assert tl["ghi"][1] == 200.0
        np.testing.assert_array_equal(tl.quality, [OBSERVED, INTERPOLATED, OBSERVED])

    def test_negative_irradiance_is_missing(self):
        tl = clean_align(rows_from([100.0, -50.0, 300.0]))
        assert tl["ghi"][1] == 200.0 and tl.quality[1] == INTERPOLATED

    def test_long_gap_stays_missing(self):
        ghi = np.r_[1.0, np.full(10, np.nan), 2.0]
        tl = clean_align(rows_from(ghi), max_gap=3)
        assert np.isnan(tl["ghi"][1:11]).all() and (tl.quality[1:11] == MISSING).all()

    def test_grid_and_duplicates(self):
        rows = rows_from([1.0, 2.0, 3.0])
        t = rows.timestamps[[0, 2, 2]]
        vals = {k: v[[0, 2, 1]] for k, v in rows.values.items()}
        vals["ghi"] = np.array([1.0, 3.0, 99.0])
        tl = clean_align(RawRows(t, vals))
        assert len(tl) == 3 and np.all(np.diff(tl.timestamps.astype(int)) == 1)
        assert tl["ghi"][2] == 3.0  # first occurrence wins
        assert tl["ghi"][1] == 2.0

    def test_affine_exact_and_endpoints(self):
        ghi = np.arange(10.0) * 3 + 7
        gapped = ghi.copy()
        gapped[[2, 3, 4, 7]] = np.nan
        tl = clean_align(rows_from(gapped))
        np.testing.assert_allclose(tl["ghi"], ghi, atol=1e-12)

    def test_empty(self):
        with pytest.raises(IngestError):
            clean_align(RawRows(np.array([], dtype="datetime64[h]"), {k: np.array([]) for k in rows_from([1.0]).values}))


class TestDerive:
    def test_night_mask(self):
        # 22 UTC at this site is deep night
        tl = prepare_timeline(rows_from([7.0, 7.0], start="2021-06-01T21"), SITE)
        assert tl["sza"][0] > 90
        for name in RADIATIVE:
            assert tl[name][0] == 0.0
        assert tl["kt"][0] == 0.0

    def test_boundary_inclusive(self):
        tl = clean_align(rows_from([5.0, 5.0]))
        tl.columns["sza"] = np.array([90.0, 89.9])
        tl.columns["ghi_clear"] = np.array([0.0, 10.0])
        tl.columns["is_night"] = np.array([True, False])
        out = apply_night_mask(tl)
        assert out["ghi"][0] == 0.0 and out["ghi"][1] == 5.0

    def test_local_midnight_encoding(self):
        # UTC+2 zone: 22 UTC is local hour 0
        tl = prepare_timeline(rows_from([0.0], start="2021-06-01T22"), SITE)
        assert tl["sin_hour"][0] == pytest.approx(0.0, abs=1e-12) and tl["cos_hour"][0] == 1.0

    def test_kt_near_one_when_clear(self):
        tl = prepare_timeline(rows_from([1.0] * 6, start="2021-06-01T06"), SITE)
        tl2 = clean_align(rows_from(tl["ghi_clear"], start="2021-06-01T06"))
        out = derive_features(tl2, SITE)
        day = ~out["is_night"]
        np.testing.assert_allclose(out["kt"][day], 1.0, atol=1e-6)

    def test_invariants_on_fixture(self, fixture_dataset):
        for tl in fixture_dataset.splits.values():
            night = tl["is_night"]
            assert np.nansum(tl["ghi"][night] + tl["dni"][night] + tl["dhi"][night]) == 0.0
            ok = ~tl.missing
            for name in ("ghi", "dni", "dhi", "ghi_clear"):
                assert np.all(tl[name][ok] >= 0)
            assert np.all((tl["rh2m"][ok] >= 0) & (tl["rh2m"][ok] <= 100))
            for a, b in (("sin_hour", "cos_hour"), ("sin_day", "cos_day"), ("sin_month", "cos_month")):
                np.testing.assert_allclose(tl[a] ** 2 + tl[b] ** 2, 1.0, atol=1e-12)

    def test_records_view(self, fixture_dataset):
        rec = fixture_dataset.splits["train"].record(0)
        assert rec.quality in {"observed", "interpolated", "missing"}
        assert isinstance(rec.is_night, bool)


def timeline_of_years(years, hours_per_year=100):
    parts = []
    for y in years:
        parts.append(np.datetime64(f"{y}-06-01T00", "h") + np.arange(hours_per_year).astype("timedelta64[h]"))
    t = np.concatenate(parts)
    cols = {name: np.ones(len(t)) for name in FEATURES + ("ghi",)}
    cols["is_night"] = np.zeros(len(t), bool)
    return Timeline(t, cols, np.zeros(len(t), np.int8))


class TestSplit:
    def test_fractions(self):
        tl = timeline_of_years([2010], 1000)
        parts = chronological_split(tl, SplitSpec(dev_range=(2010, 2010), stress_range=()))
        assert [len(parts[k]) for k in ("train", "val", "test_internal")] == [700, 150, 150]
        assert parts["train"].timestamps.max() < parts["val"].timestamps.min() < parts["test_internal"].timestamps.min()

    def test_stress_and_exclusion(self):
        tl = timeline_of_years([2014, 2015, 2020, 2024, 2025])
        parts = chronological_split(tl, SplitSpec(dev_range=(2014, 2015)))
        assert set(parts["stress"].years) == {2020, 2024}
        for p in parts.values():
            assert 2025 not in set(p.years)
        stamps = [set(p.timestamps.astype(int)) for p in parts.values()]
        for i in range(len(stamps)):
            for j in range(i + 1, len(stamps)):
                assert not stamps[i] & stamps[j]

    def test_empty_split(self):
        with pytest.raises(ValueError):
            chronological_split(timeline_of_years([2020]), SplitSpec(dev_range=(2010, 2015), stress_range=()))

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            SplitSpec(train_frac=0.8)
        with pytest.raises(ValueError):
            SplitSpec(dev_range=(2015, 2010))
        with pytest.raises(ValueError):
            SplitSpec(stress_range=(2014, 2016))


class TestNormalization:
    def test_population_std(self):
        tl = timeline_of_years([2010], 3)
        for name in FEATURES:
            tl.columns[name] = np.array([1.0, 2.0, 3.0])
        tl.columns["ghi"] = np.array([0.0, 500.0, 1000.0])
        stats = fit_norm_stats(tl)
        np.testing.assert_allclose(stats.feature_mean, 2.0)
        np.testing.assert_allclose(stats.feature_std, np.sqrt(2 / 3))
        assert (stats.target_min, stats.target_max) == (0.0, 1000.0)
        assert stats.fitted_on == "train"

    def test_constant_feature_warns(self):
        tl = timeline_of_years([2010], 3)
        tl.columns["ghi"] = np.array([0.0, 1.0, 2.0])
        with pytest.warns(RuntimeWarning, match="constant"):
            stats = fit_norm_stats(tl)
        assert np.all(stats.feature_std > 0)

    def test_constant_target_rejected(self):
        with pytest.raises(ValueError), warnings.catch_warnings():
            warnings.simplefilter("ignore")
            fit_norm_stats(timeline_of_years([2010], 3))

    def test_apply_and_roundtrip(self, fixture_dataset):
        stats = fixture_dataset.stats
        tl = fixture_dataset.splits["train"]
        feats, target = apply_norm(tl, stats)
        ok = ~tl.missing
        np.testing.assert_allclose(feats[ok].mean(axis=0), 0.0, atol=1e-9)
        np.testing.assert_allclose(stats.normalize_features(stats.feature_mean), 0.0)
        assert stats.normalize_target(stats.target_max) == 1.0
        y = np.linspace(0, 1100, 50)
        np.testing.assert_allclose(stats.denormalize_target(stats.normalize_target(y)), y, rtol=1e-9)
        assert NormStats.from_dict(stats.to_dict()).to_dict() == stats.to_dict()

    def test_stats_ignore_other_splits(self, fixture_dataset):
        rng = np.random.default_rng(0)
        splits = {k: v.copy() for k, v in fixture_dataset.splits.items()}
        for name in ("val", "test_internal", "stress"):
            for col in splits[name].columns:
                if splits[name].columns[col].dtype != bool:
                    splits[name].columns[col] = rng.normal(size=len(splits[name])) * 1e6
        before = fit_norm_stats(fixture_dataset.splits["train"])
        after = fit_norm_stats(splits["train"])
        assert np.array_equal(before.feature_mean, after.feature_mean)
        assert np.array_equal(before.feature_std, after.feature_std)
        assert before.target_max == after.target_max


    def test_boundary_gap_not_bridged_with_later_split(self, fixture_dataset):
        rows = read_csv(fixture_path("fixture_90d.csv"))
        cut = fixture_dataset.splits["train"].timestamps.max()
        hidden = (rows.timestamps > cut - np.timedelta64(2, "h")) & (rows.timestamps <= cut)
        later = rows.timestamps > cut
        a = {k: v.copy() for k, v in rows.values.items()}
        for v in a.values():
            v[hidden] = np.nan
        b = {k: v.copy() for k, v in a.items()}
        for v in b.values():
            v[later] *= 1.5
        spec = fixture_dataset.split_spec
        ds_a = prepare(RawRows(rows.timestamps, a), SITE, spec)
        ds_b = prepare(RawRows(rows.timestamps, b), SITE, spec)
        assert ds_a.splits["train"].missing[-2:].all()
        assert np.array_equal(ds_a.stats.feature_mean, ds_b.stats.feature_mean)

    def test_no_bridge_across_grid_jump(self):
        times = np.concatenate([np.datetime64("2014-12-31T20", "h") + np.arange(4), np.datetime64("2016-01-01T00", "h") + np.arange(4)])
        vals = {k: np.arange(8.0) + 1 for k in RAW_FIELDS}
        for v in vals.values():
            v[[3, 4]] = np.nan
        tl = clean_align(RawRows(times, vals), max_gap=0)
        tl = bridge_gaps(tl.subset(np.isin(tl.years, [2014, 2016])), 3)
        assert tl.missing.sum() == 2


@pytest.fixture(scope="module")
def clean():
    return prepare(synthetic_rows("2021-01-10T00", 24 * 40, seed=3), SITE, SplitSpec(dev_range=(2021, 2021), stress_range=()))


class TestSamples:
    def test_count(self, clean):
        tl = clean.splits["train"].subset(slice(0, 26))
        s = build_samples(tl, clean.stats)
        assert len(s) == 2 and s.skipped == 0
        assert s.X.shape == (2, 20, 75) and s.gates.shape == (2, 2)

    def test_gap_skipped(self, clean):
        tl = clean.splits["train"].subset(slice(0, 60)).copy()
        tl.quality[30] = MISSING
        s = build_samples(tl, clean.stats)
        assert len(s) == 60 - 24 - 25 and s.skipped == 25

    def test_too_short(self, clean):
        assert len(build_samples(clean.splits["train"].subset(slice(0, 24)), clean.stats)) == 0

    def test_alignment(self, clean):
        tl = clean.splits["train"]
        s = build_samples(tl, clean.stats)
        feats, target = apply_norm(tl, clean.stats)
        i = 17
        np.testing.assert_allclose(s.X[i, 0, :15], feats[i], rtol=1e-6)
        np.testing.assert_allclose(s.X[i, -1, -15:], feats[i + 23], rtol=1e-6)
        assert s.y[i] == target[i + 24]
        assert s.times[i] == tl.timestamps[i + 24]
        assert s.gates[i, 0] == pytest.approx(tl["sza"][i + 24] / 180, rel=1e-6)
        assert s.gates[i, 1] == pytest.approx(min(tl["kt"][i + 23], 1.2) / 1.2, rel=1e-6)

    def test_fixture_invariants(self, fixture_samples):
        for s in fixture_samples.values():
            assert np.all(np.isfinite(s.X))
            assert np.all((s.gates >= 0) & (s.gates <= 1))
            sample = s[0]
            assert sample.hankel_input.shape == (20, 75)

    def test_window_inputs(self, clean):
        tl = clean.splits["train"].subset(slice(0, 25))
        s = build_samples(tl, clean.stats)
        X, g_sza, g_kt, target_time, night = window_inputs(tl.subset(slice(0, 24)), clean.stats, SITE)
        np.testing.assert_array_equal(X, s.X[0])
        assert g_sza == pytest.approx(float(s.gates[0, 0]), rel=1e-6)
        assert g_kt == pytest.approx(float(s.gates[0, 1]), rel=1e-6)
        assert target_time == s.times[0] and night == bool(s.night[0])
        with pytest.raises(ValueError):
            window_inputs(tl.subset(slice(0, 10)), clean.stats, SITE)


class TestDatasetFile:
    def test_roundtrip(self, fixture_dataset, tmp_path):
        save_dataset(fixture_dataset, tmp_path / "d.npz")
        back = load_dataset(tmp_path / "d.npz")
        assert back.split_spec == fixture_dataset.split_spec and back.site == fixture_dataset.site
        assert np.array_equal(back.stats.feature_std, fixture_dataset.stats.feature_std)
        for name in fixture_dataset.splits:
            a, b = fixture_dataset.samples(name), back.samples(name)
            assert np.array_equal(a.X, b.X) and np.array_equal(a.y, b.y)

    def test_rejects_other_files(self, tmp_path):
        np.savez(tmp_path / "x.npz", header=np.frombuffer(b'{"format": "other"}', np.uint8))
        with pytest.raises(IngestError):
            load_dataset(tmp_path / "x.npz")
