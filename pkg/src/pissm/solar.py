"""Solar geometry, clear-sky irradiance and the clearness index.

Public angles are in degrees; trigonometry is done in radians internally.
All functions are pure and accept scalars or numpy arrays where noted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from datetime import datetime, timezone

import numpy as np

DEG = math.pi / 180.0

KT_CLIP = 1.2


class DomainError(ValueError):
    """Raised when an input lies outside the domain of a solar computation."""


@dataclass(frozen=True)
class SiteConfig:
    latitude: float = 14.7
    longitude: float = 33.2
    timezone_meridian: float = 30.0  # UTC+2
    solar_constant: float = 1361.0
    transmission_coeff: float = 0.75
    kt_epsilon: float = 1e-6
    equation_of_time: bool = False

    def __post_init__(self):
        if not -90.0 <= self.latitude <= 90.0:
            raise DomainError(f"latitude {self.latitude} outside [-90, 90]")
        if not -180.0 <= self.longitude <= 180.0:
            raise DomainError(f"longitude {self.longitude} outside [-180, 180]")
        if not 0.0 < self.transmission_coeff <= 1.0:
            raise DomainError(f"transmission_coeff {self.transmission_coeff} outside (0, 1]")
        if not self.kt_epsilon > 0.0:
            raise DomainError("kt_epsilon must be positive")


@dataclass(frozen=True)
class SolarState:
    declination: float
    hour_angle: float
    zenith_angle: float
    elevation_angle: float
    clear_sky_ghi: float
    is_night: bool


def declination(day_of_year):
    """Solar declination in degrees, ``23.45 sin(360/365 (284 + d))``.

    Accepts an integer day or an integer array; every day must lie in 1..366.
    """
    d = np.asarray(day_of_year)
    if np.any((d < 1) | (d > 366)):
        raise DomainError(f"day_of_year outside 1..366: {day_of_year}")
    # 360*(284+d)/365 is exact at whole turns; reducing mod 360 before the
    # radian conversion makes d=81 give exactly zero.
    arg = np.mod(360.0 * (284.0 + d) / 365.0, 360.0)
    out = 23.45 * np.sin(arg * DEG)
    return float(out) if out.ndim == 0 else out


def _utc(ts: datetime) -> datetime:
    if ts.tzinfo is None:
        return ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def equation_of_time(day_of_year):
    """Equation of time in minutes (Spencer-style three-term approximation)."""
    b = (360.0 / 365.0) * (np.asarray(day_of_year) - 81) * DEG
    return 9.87 * np.sin(2 * b) - 7.53 * np.cos(b) - 1.5 * np.sin(b)


def solar_time_hours(utc_hour, day_of_year, site: SiteConfig):
    """Apparent solar time in hours for a fractional UTC hour."""
    local_civil = np.asarray(utc_hour, dtype=float) + site.timezone_meridian / 15.0
    t_solar = local_civil + (site.longitude - site.timezone_meridian) / 15.0
    if site.equation_of_time:
        t_solar = t_solar + equation_of_time(day_of_year) / 60.0
    return t_solar


def hour_angle_from_solar_time(t_solar):
    """Hour angle ``15 (t_solar - 12)`` wrapped to (-180, 180]."""
    h = 15.0 * (np.asarray(t_solar, dtype=float) - 12.0)
    h = -np.mod(-h + 180.0, 360.0) + 180.0
    return float(h) if h.ndim == 0 else h


def hour_angle(timestamp: datetime, site: SiteConfig) -> float:
    """Hour angle in degrees for a UTC instant (naive datetimes are taken as UTC)."""
    ts = _utc(timestamp)
    utc_hour = ts.hour + ts.minute / 60.0 + ts.second / 3600.0
    doy = ts.timetuple().tm_yday
    return hour_angle_from_solar_time(solar_time_hours(utc_hour, doy, site))


def zenith_angle(latitude, declination_deg, hour_angle_deg):
    """Solar zenith angle in degrees; the cosine is clamped to [-1, 1]."""
    lat = np.asarray(latitude, dtype=float) * DEG
    dec = np.asarray(declination_deg, dtype=float) * DEG
    h = np.asarray(hour_angle_deg, dtype=float) * DEG
    cos_z = np.sin(lat) * np.sin(dec) + np.cos(lat) * np.cos(dec) * np.cos(h)
    z = np.arccos(np.clip(cos_z, -1.0, 1.0)) / DEG
    return float(z) if z.ndim == 0 else z


def clear_sky_ghi(elevation_angle, site: SiteConfig):
    """Clear-sky GHI ``I0 * Tc * sin(alpha)``, zero when the sun is at or below the horizon."""
    alpha = np.asarray(elevation_angle, dtype=float)
    ghi = np.where(alpha > 0.0, site.solar_constant * site.transmission_coeff * np.sin(alpha * DEG), 0.0)
    return float(ghi) if ghi.ndim == 0 else ghi


def clearness_index(ghi_measured, ghi_clear, site: SiteConfig, clip: float = KT_CLIP):
    """Measured over clear-sky GHI with an epsilon guard, clipped to [0, clip]."""
    meas = np.asarray(ghi_measured, dtype=float)
    clear = np.asarray(ghi_clear, dtype=float)
    if np.any(meas < 0) or np.any(clear < 0):
        raise DomainError("irradiance inputs must be non-negative")
    kt = np.clip(meas / (clear + site.kt_epsilon), 0.0, clip)
    return float(kt) if kt.ndim == 0 else kt


def cyclical_encode(t, period):
    """Map ``t`` with the given period onto the unit circle as ``(sin, cos)``."""
    if not period > 0:
        raise DomainError(f"period must be positive, got {period}")
    angle = 2.0 * np.pi * np.asarray(t, dtype=float) / period
    s, c = np.sin(angle), np.cos(angle)
    if s.ndim == 0:
        return float(s), float(c)
    return s, c


def night_flag(zenith, ghi_clear):
    """Night rule: zenith at or beyond 90 degrees, or no clear-sky irradiance."""
    return (np.asarray(zenith) >= 90.0) | (np.asarray(ghi_clear) <= 0.0)


def solar_state(timestamp: datetime, site: SiteConfig) -> SolarState:
    ts = _utc(timestamp)
    dec = declination(ts.timetuple().tm_yday)
    h = hour_angle(ts, site)
    sza = zenith_angle(site.latitude, dec, h)
    elev = 90.0 - sza
    ghi_c = clear_sky_ghi(elev, site)
    return SolarState(
        declination=dec,
        hour_angle=h,
        zenith_angle=sza,
        elevation_angle=elev,
        clear_sky_ghi=ghi_c,
        is_night=bool(night_flag(sza, ghi_c)),
    )


def solar_arrays(times: np.ndarray, site: SiteConfig) -> dict[str, np.ndarray]:
    """Vectorised :func:`solar_state` over ``datetime64`` UTC timestamps.

    Returns a dict of arrays keyed like the :class:`SolarState` fields.
    """
    times = np.asarray(times, dtype="datetime64[s]")
    days = times.astype("datetime64[D]")
    years = times.astype("datetime64[Y]")
    doy = (days - years.astype("datetime64[D]")).astype(int) + 1
    utc_hour = (times - days).astype(float) / 3600.0
    dec = declination(doy)
    h = hour_angle_from_solar_time(solar_time_hours(utc_hour, doy, site))
    sza = zenith_angle(site.latitude, dec, h)
    elev = 90.0 - sza
    ghi_c = clear_sky_ghi(elev, site)
    return {
        "declination": np.atleast_1d(dec),
        "hour_angle": np.atleast_1d(h),
        "zenith_angle": np.atleast_1d(sza),
        "elevation_angle": np.atleast_1d(elev),
        "clear_sky_ghi": np.atleast_1d(ghi_c),
        "is_night": np.atleast_1d(night_flag(sza, ghi_c)),
    }
