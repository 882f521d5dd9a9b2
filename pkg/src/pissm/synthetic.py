"""Synthetic hourly meteorology for offline tests and the bundled fixture.

The generator drives GHI from the clear-sky model times a cloudiness process
and derives DNI/DHI, temperature, humidity, wind and pressure from simple
diurnal and seasonal cycles. With ``noiseless=True`` GHI equals clear-sky GHI
and every other field is a deterministic function of time.
"""

from __future__ import annotations

import numpy as np

from . import solar
from .features import FILL_VALUE, RAW_FIELDS, RawRows
from .solar import SiteConfig


def synthetic_rows(
    start: str,
    hours: int,
    site: SiteConfig | None = None,
    seed: int = 0,
    noiseless: bool = False,
) -> RawRows:
    site = site or SiteConfig()
    rng = np.random.default_rng(seed)
    times = np.datetime64(start, "h") + np.arange(hours).astype("timedelta64[h]")
    sun = solar.solar_arrays(times, site)
    clear = sun["clear_sky_ghi"]
    cos_z = np.clip(np.cos(np.radians(sun["zenith_angle"])), 0.0, None)
    t_hours = np.arange(hours, dtype=float)
    local_hour = (times.astype("datetime64[h]").astype(int) + site.timezone_meridian / 15.0) % 24
    doy = (times.astype("datetime64[D]") - times.astype("datetime64[Y]").astype("datetime64[D]")).astype(int) + 1
    diurnal = np.cos(2 * np.pi * (local_hour - 15.0) / 24.0)
    seasonal = np.cos(2 * np.pi * (doy - 135.0) / 365.0)

    if noiseless:
        kt = np.ones(hours)
    else:
        # AR(1) cloudiness in log space, mostly clear as in a semi-arid site
        z = np.empty(hours)
        z[0] = 0.0
        eps = rng.normal(0.0, 0.35, hours)
        for i in range(1, hours):
            z[i] = 0.92 * z[i - 1] + eps[i]
        kt = np.clip(1.0 - 0.25 * np.abs(z), 0.15, 1.05)

    ghi = clear * kt
    diffuse_frac = np.clip(1.0 - 0.9 * kt, 0.1, 0.95)
    dhi = ghi * diffuse_frac
    with np.errstate(divide="ignore", invalid="ignore"):
        dni = np.where(cos_z > 0.05, (ghi - dhi) / np.maximum(cos_z, 0.05), 0.0)
    dni = np.clip(dni, 0.0, 1100.0)

    t2m = 30.0 + 6.0 * seasonal + 7.0 * diurnal
    rh2m = 35.0 - 12.0 * seasonal - 10.0 * diurnal
    ws10m = 4.0 + 1.5 * np.sin(2 * np.pi * t_hours / 24.0 + 1.0)
    ps = 96.5 - 0.4 * seasonal + 0.1 * np.cos(4 * np.pi * local_hour / 24.0)
    if not noiseless:
        t2m = t2m + rng.normal(0.0, 0.8, hours)
        rh2m = rh2m + rng.normal(0.0, 2.0, hours) - 15.0 * (1.0 - kt)
        ws10m = np.abs(ws10m + rng.normal(0.0, 0.8, hours))
        ps = ps + rng.normal(0.0, 0.05, hours)
    values = {
        "ghi": ghi,
        "dni": dni,
        "dhi": dhi,
        "t2m": t2m,
        "rh2m": np.clip(rh2m, 2.0, 100.0),
        "ws10m": ws10m,
        "ps": ps,
    }
    return RawRows(times, {k: np.asarray(values[k], dtype=float) for k in RAW_FIELDS})


def add_defects(rows: RawRows, seed: int = 1) -> RawRows:
    """Sprinkle realistic defects: fill values, short gaps, one long gap, night noise, a duplicate."""
    rng = np.random.default_rng(seed)
    n = len(rows)
    vals = {k: v.copy() for k, v in rows.values.items()}
    for i in rng.choice(n, size=max(1, n // 400), replace=False):
        vals[rng.choice(RAW_FIELDS)][i] = FILL_VALUE
    for i in rng.choice(n - 4, size=max(1, n // 700), replace=False):
        vals["ghi"][i : i + rng.integers(1, 3)] = np.nan
    start = n // 2
    for k in RAW_FIELDS:
        vals[k][start : start + 8] = np.nan
    night = vals["ghi"] == 0
    noisy = night & (rng.random(n) < 0.05)
    vals["ghi"][noisy] = rng.uniform(1.0, 8.0, noisy.sum())
    vals["dhi"][rng.choice(n, size=3, replace=False)] = -4.0
    times = rows.timestamps
    dup = n // 3
    times = np.insert(times, dup, times[dup])
    vals = {k: np.insert(v, dup, v[dup]) for k, v in vals.items()}
    return RawRows(times, vals)


def fixture_rows() -> RawRows:
    """The 90-day bundled fixture: 2019-11-02 .. 2020-01-30 at the default site."""
    return add_defects(synthetic_rows("2019-11-02T00", 90 * 24, seed=2019), seed=7)
