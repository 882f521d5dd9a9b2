from datetime import datetime, timedelta, timezone

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import TINY
from pissm import solar
from pissm.evaluate import mae, r2, rmse
from pissm.features import NormStats, _interpolate_gaps, gate_scalars
from pissm.hankel import HankelSpec, unroll
from pissm.model import ModelConfig, deserialize, forward, init_model, physics_gate, serialize
from pissm.autodiff import Tensor
from pissm.solar import SiteConfig
from pissm.ssm import SsmParams, discretize_diag, ssm_scan, ssm_scan_parallel

SETTINGS = settings(max_examples=200, deadline=None)
finite = st.floats(-1e3, 1e3, allow_nan=False)
lat = st.floats(-90, 90)
dec = st.floats(-23.45, 23.45)
hour_angle = st.floats(-180, 180)


class TestSolarProperties:
    @SETTINGS
    @given(st.integers(1, 366))
    def test_declination_bounded(self, d):
        assert abs(solar.declination(d)) <= 23.45

    @SETTINGS
    @given(lat, dec, hour_angle)
    def test_zenith_range_and_symmetry(self, L, d, h):
        z = solar.zenith_angle(L, d, h)
        assert 0.0 <= z <= 180.0
        assert abs(z - solar.zenith_angle(d, L, h)) <= 1e-9

    @SETTINGS
    @given(st.floats(0, 90), st.floats(0, 90))
    def test_clear_sky_monotone(self, a, b):
        site = SiteConfig()
        lo, hi = sorted((a, b))
        assert solar.clear_sky_ghi(lo, site) <= solar.clear_sky_ghi(hi, site)

    @SETTINGS
    @given(st.floats(-90, 0))
    def test_clear_sky_zero_below_horizon(self, a):
        assert solar.clear_sky_ghi(a, SiteConfig()) == 0.0

    @SETTINGS
    @given(st.floats(-1e6, 1e6), st.floats(0.1, 1e4))
    def test_cyclical_on_unit_circle(self, t, period):
        s, c = solar.cyclical_encode(t, period)
        assert abs(s * s + c * c - 1.0) <= 1e-12

    @SETTINGS
    @given(st.floats(0, 1500), st.floats(0, 1100))
    def test_clearness_bounded(self, meas, clear):
        kt = solar.clearness_index(meas, clear, SiteConfig())
        assert 0.0 <= kt <= 1.2
        g_sza, g_kt = gate_scalars(90.0, kt)
        assert 0.0 <= g_kt <= 1.0

    @SETTINGS
    @given(
        st.datetimes(datetime(1990, 1, 1), datetime(2030, 12, 31)),
        st.floats(-60, 60),
        st.floats(-180, 180),
    )
    def test_night_rule_equivalence(self, when, latitude, longitude):
        site = SiteConfig(latitude=latitude, longitude=longitude, timezone_meridian=round(longitude / 15) * 15)
        s = solar.solar_state(when.replace(tzinfo=timezone.utc), site)
        assert s.is_night == (s.zenith_angle >= 90 or s.clear_sky_ghi <= 0)
        assert s.clear_sky_ghi >= 0 and abs(s.declination) <= 23.45
        assert abs(s.elevation_angle - (90 - s.zenith_angle)) <= 1e-12

    @settings(max_examples=50, deadline=None)
    @given(st.datetimes(datetime(2000, 1, 1), datetime(2030, 1, 1)))
    def test_scalar_and_vector_paths_agree(self, when):
        site = SiteConfig()
        times = np.array([np.datetime64(when.replace(minute=0, second=0, microsecond=0), "h") + np.timedelta64(i, "h") for i in range(5)])
        arr = solar.solar_arrays(times, site)
        for i, t in enumerate(times):
            s = solar.solar_state(t.astype(datetime).replace(tzinfo=timezone.utc), site)
            assert abs(arr["zenith_angle"][i] - s.zenith_angle) <= 1e-9
            assert arr["is_night"][i] == s.is_night


def naive_unroll(x, k):
    n, F = x.shape
    m = n - k + 1
    out = np.empty((m, k * F))
    for i in range(m):
        for j in range(k):
            for f in range(F):
                out[i, j * F + f] = x[i + j, f]
    return out


class TestHankelProperties:
    @SETTINGS
    @given(st.data())
    def test_matches_naive(self, data):
        n = data.draw(st.integers(1, 32))
        k = data.draw(st.integers(1, min(8, n)))
        F = data.draw(st.integers(1, 4))
        x = data.draw(arrays(np.float64, (n, F), elements=finite))
        spec = HankelSpec(window=n, subwindow=k, features=F)
        np.testing.assert_array_equal(unroll(x, spec), naive_unroll(x, k))


class TestInterpolationProperties:
    @SETTINGS
    @given(finite, finite, st.integers(10, 60), st.data())
    def test_exact_on_affine(self, a, b, n, data):
        t = np.arange(n, dtype=float)
        clean = a + b * t / n
        start = data.draw(st.integers(1, n - 4))
        length = data.draw(st.integers(1, 3))
        holed = clean.copy()
        holed[start : start + length] = np.nan
        filled, flag = _interpolate_gaps(holed, 3)
        np.testing.assert_allclose(filled, clean, rtol=1e-12, atol=1e-9)
        assert flag.sum() == length
        # observed values are untouched
        np.testing.assert_array_equal(filled[~flag], holed[~flag])

    @SETTINGS
    @given(st.integers(4, 12), st.integers(10, 40))
    def test_long_gap_left_missing(self, length, n):
        x = np.arange(n + length + 2, dtype=float)
        x[1 : 1 + length] = np.nan
        filled, flag = _interpolate_gaps(x, 3)
        assert np.isnan(filled[1 : 1 + length]).all() and not flag.any()


class TestSsmProperties:
    @SETTINGS
    @given(arrays(np.float64, 6, elements=st.floats(-8, 4)), st.floats(1e-3, 5))
    def test_discretization_stable(self, theta, dt):
        H = len(theta)
        d = discretize_diag(SsmParams(theta, np.eye(H), np.eye(H), np.ones(H), dt))
        assert np.all((d.a_bar > 0) & (d.a_bar < 1))
        assert np.all(d.b_bar_scale > 0)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(1, 128), st.integers(0, 2**31))
    def test_scans_agree(self, T, seed):
        rng = np.random.default_rng(seed)
        H = 4
        p = SsmParams(rng.normal(size=H), rng.normal(size=(H, H)), rng.normal(size=(H, H)), rng.normal(size=H))
        d = discretize_diag(p)
        x = rng.normal(size=(T, H))
        np.testing.assert_allclose(ssm_scan_parallel(x, d), ssm_scan(x, d), atol=1e-10)


class TestModelProperties:
    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**31), st.integers(1, 6))
    def test_forward_nonnegative(self, seed, n):
        rng = np.random.default_rng(seed)
        params = init_model(ModelConfig(**{**TINY.__dict__, "seed": seed % 1000}))
        for t in params:
            t.data += rng.normal(0, 0.5, t.shape).astype(np.float32)
        X = rng.normal(0, 3, (n, TINY.rows, TINY.width)).astype(np.float32)
        gates = rng.uniform(0, 1, (n, 2))
        out = forward(X, gates, params).data
        assert np.all(out >= 0)
        np.testing.assert_array_equal(out, forward(X, gates, params).data)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**31), st.floats(0, 1), st.floats(0, 1), st.floats(0, 1))
    def test_gate_monotone_in_sza(self, seed, s1, s2, kt):
        rng = np.random.default_rng(seed)
        params = init_model(TINY, dtype=np.float64)
        params["gate_sza.weight"].data[:] = np.abs(rng.normal(size=params["gate_sza.weight"].shape))
        h = Tensor(rng.normal(size=(1, TINY.hidden)))
        lo, hi = sorted((s1, s2))
        kt_t = Tensor(np.array([[kt]]))
        a = physics_gate(h, Tensor(np.array([[lo]])), kt_t, params).data
        b = physics_gate(h, Tensor(np.array([[hi]])), kt_t, params).data
        assert np.all(np.abs(a) <= np.abs(b) + 1e-15)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**31))
    def test_serialization_round_trip(self, seed):
        rng = np.random.default_rng(seed)
        params = init_model(ModelConfig(**{**TINY.__dict__, "seed": seed % 1000}))
        for t in params:
            t.data[...] = rng.normal(size=t.shape).astype(np.float32)
        stats = NormStats(rng.normal(size=3), rng.uniform(0.1, 2, 3), 0.0, float(rng.uniform(100, 1200)))
        back, back_stats, cfg = deserialize(serialize(params, stats))
        assert back.equal(params)
        arch = ("features", "window", "subwindow", "conv_filters", "hidden", "fc_units")
        assert all(getattr(cfg, f) == getattr(params.config, f) for f in arch)
        np.testing.assert_array_equal(back_stats.feature_std, stats.feature_std)


class TestMetricProperties:
    @SETTINGS
    @given(st.integers(2, 200), st.integers(0, 2**31))
    def test_identities(self, n, seed):
        rng = np.random.default_rng(seed)
        t = rng.uniform(0, 1000, n)
        if np.ptp(t) == 0:
            return
        p = t + rng.normal(0, rng.uniform(0, 100), n)
        assert 0 <= mae(p, t) <= rmse(p, t) + 1e-12
        assert r2(p, t) <= 1.0
        perm = rng.permutation(n)
        assert abs(rmse(p[perm], t[perm]) - rmse(p, t)) <= 1e-12 * max(rmse(p, t), 1.0)
