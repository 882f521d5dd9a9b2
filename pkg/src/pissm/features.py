"""Ingest, clean, mask, featurize, split, normalize and window hourly data.

Timelines are columnar: one numpy array per field over a strictly increasing
hourly UTC grid. :class:`MeteoRecord` gives a row view when one is needed.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import solar
from .hankel import HankelSpec, unroll
from .solar import KT_CLIP, SiteConfig

log = logging.getLogger(__name__)

RAW_FIELDS = ("ghi", "dni", "dhi", "t2m", "rh2m", "ws10m", "ps")
RADIATIVE = ("ghi", "dni", "dhi")
FEATURES = (
    "dni",
    "dhi",
    "ghi_clear",
    "kt",
    "sza",
    "t2m",
    "rh2m",
    "ws10m",
    "ps",
    "sin_month",
    "cos_month",
    "sin_day",
    "cos_day",
    "sin_hour",
    "cos_hour",
)
FILL_VALUE = -999.0
SIGMA_FLOOR = 1e-8
DATASET_VERSION = 1

OBSERVED, INTERPOLATED, MISSING = 0, 1, 2
QUALITY_NAMES = {OBSERVED: "observed", INTERPOLATED: "interpolated", MISSING: "missing"}


class IngestError(RuntimeError):
    pass


class SchemaError(IngestError):
    pass


# ----------------------------------------------------------------- types


@dataclass(frozen=True)
class MeteoRecord:
    timestamp: np.datetime64
    ghi: float
    dni: float
    dhi: float
    t2m: float
    rh2m: float
    ws10m: float
    ps: float
    ghi_clear: float
    kt: float
    sza: float
    sin_month: float
    cos_month: float
    sin_day: float
    cos_day: float
    sin_hour: float
    cos_hour: float
    is_night: bool
    quality: str


@dataclass
class RawRows:
    """Rows as read from a source: timestamps plus the seven raw fields (NaN = missing)."""

    timestamps: np.ndarray  # datetime64[h]
    values: dict[str, np.ndarray]

    def __len__(self):
        return len(self.timestamps)


@dataclass
class Timeline:
    """Hourly grid with raw, derived and bookkeeping columns."""

    timestamps: np.ndarray
    columns: dict[str, np.ndarray]
    quality: np.ndarray

    def __len__(self):
        return len(self.timestamps)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.columns[name]

    @property
    def missing(self) -> np.ndarray:
        return self.quality == MISSING

    def subset(self, mask_or_slice) -> "Timeline":
        return Timeline(
            timestamps=self.timestamps[mask_or_slice],
            columns={k: v[mask_or_slice] for k, v in self.columns.items()},
            quality=self.quality[mask_or_slice],
        )

    def copy(self) -> "Timeline":
        return Timeline(self.timestamps.copy(), {k: v.copy() for k, v in self.columns.items()}, self.quality.copy())

    @property
    def years(self) -> np.ndarray:
        return self.timestamps.astype("datetime64[Y]").astype(int) + 1970

    def record(self, i: int) -> MeteoRecord:
        kw = {name: float(self.columns[name][i]) for name in RAW_FIELDS + FEATURES if name in self.columns}
        return MeteoRecord(
            timestamp=self.timestamps[i],
            is_night=bool(self.columns["is_night"][i]),
            quality=QUALITY_NAMES[int(self.quality[i])],
            **kw,
        )

    def records(self) -> Iterable[MeteoRecord]:
        return (self.record(i) for i in range(len(self)))


@dataclass
class NormStats:
    feature_mean: np.ndarray
    feature_std: np.ndarray
    target_min: float
    target_max: float
    fitted_on: str = "train"

    def to_dict(self) -> dict:
        return {
            "feature_mean": [float(v) for v in self.feature_mean],
            "feature_std": [float(v) for v in self.feature_std],
            "target_min": float(self.target_min),
            "target_max": float(self.target_max),
            "fitted_on": self.fitted_on,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(
            feature_mean=np.asarray(d["feature_mean"], dtype=np.float64),
            feature_std=np.asarray(d["feature_std"], dtype=np.float64),
            target_min=float(d["target_min"]),
            target_max=float(d["target_max"]),
            fitted_on=d.get("fitted_on", "train"),
        )

    def normalize_features(self, x: np.ndarray) -> np.ndarray:
        return (x - self.feature_mean) / self.feature_std

    def normalize_target(self, y):
        return (np.asarray(y, dtype=np.float64) - self.target_min) / (self.target_max - self.target_min)

    def denormalize_target(self, y):
        return np.asarray(y, dtype=np.float64) * (self.target_max - self.target_min) + self.target_min


@dataclass(frozen=True)
class SplitSpec:
    train_frac: float = 0.70
    val_frac: float = 0.15
    test_frac: float = 0.15
    dev_range: tuple[int, int] = (2010, 2015)
    stress_range: tuple[int, int] = (2020, 2024)
    excluded_years: tuple[int, ...] = (2025,)

    def __post_init__(self):
        total = self.train_frac + self.val_frac + self.test_frac
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"split fractions sum to {total}, expected 1.0")
        if min(self.train_frac, self.val_frac, self.test_frac) <= 0:
            raise ValueError("split fractions must be positive")
        if self.dev_range[0] > self.dev_range[1]:
            raise ValueError("dev_range is reversed")
        if self.stress_range and self.stress_range[0] <= self.dev_range[1]:
            raise ValueError("stress_range must start after dev_range")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SplitSpec":
        return cls(
            train_frac=d["train_frac"],
            val_frac=d["val_frac"],
            test_frac=d["test_frac"],
            dev_range=tuple(d["dev_range"]),
            stress_range=tuple(d["stress_range"]),
            excluded_years=tuple(d["excluded_years"]),
        )


@dataclass
class TrainingSample:
    hankel_input: np.ndarray  # (m, k*F)
    gate_sza: float
    gate_kt: float
    target: float
    target_raw: float
    target_is_night: bool
    target_time: np.datetime64 | None = None


@dataclass
class SampleSet:
    """A batch of training samples stored as stacked arrays."""

    X: np.ndarray  # (N, m, k*F) float32
    gates: np.ndarray  # (N, 2) float32, columns (sza, kt)
    y: np.ndarray  # (N,) normalized target
    y_raw: np.ndarray  # (N,) W/m2
    night: np.ndarray  # (N,) bool, at target time
    times: np.ndarray  # (N,) datetime64[h] target time
    skipped: int = 0

    def __len__(self):
        return len(self.y)

    def __getitem__(self, i: int) -> TrainingSample:
        return TrainingSample(
            hankel_input=self.X[i],
            gate_sza=float(self.gates[i, 0]),
            gate_kt=float(self.gates[i, 1]),
            target=float(self.y[i]),
            target_raw=float(self.y_raw[i]),
            target_is_night=bool(self.night[i]),
            target_time=self.times[i],
        )

    def take(self, idx) -> "SampleSet":
        return SampleSet(self.X[idx], self.gates[idx], self.y[idx], self.y_raw[idx], self.night[idx], self.times[idx])

    @classmethod
    def concat(cls, sets: Sequence["SampleSet"]) -> "SampleSet":
        return cls(
            np.concatenate([s.X for s in sets]),
            np.concatenate([s.gates for s in sets]),
            np.concatenate([s.y for s in sets]),
            np.concatenate([s.y_raw for s in sets]),
            np.concatenate([s.night for s in sets]),
            np.concatenate([s.times for s in sets]),
            sum(s.skipped for s in sets),
        )

    @classmethod
    def empty(cls, spec: HankelSpec) -> "SampleSet":
        return cls(
            np.zeros((0, spec.rows, spec.width), np.float32),
            np.zeros((0, 2), np.float32),
            np.zeros(0),
            np.zeros(0),
            np.zeros(0, bool),
            np.zeros(0, "datetime64[h]"),
        )


# ---------------------------------------------------------------- ingest


def _parse_timestamp(text: str) -> np.datetime64:
    text = text.strip()
    if text.endswith("Z"):
        text = text[:-1]
    if "+" in text[10:]:
        base, off = text[:10] + text[10:].split("+")[0], text[10:].split("+")[1]
        if off not in ("00:00", "0000", "00"):
            raise ValueError(f"timestamp {text!r} is not UTC")
        text = base
    return np.datetime64(text, "h")


def _parse_value(text: str) -> float:
    text = text.strip()
    if text == "":
        return np.nan
    v = float(text)
    return np.nan if v == FILL_VALUE else v


def read_csv(source) -> RawRows:
    """Read the fixture CSV schema ``timestamp,ghi,dni,dhi,t2m,rh2m,ws10m,ps``.

    ``source`` is a path or an open text stream. Empty cells and the POWER
    fill value -999 become NaN.
    """
    if isinstance(source, (str, Path)):
        with open(source, newline="") as fh:
            return read_csv(fh)
    reader = csv.reader(source)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise IngestError("empty CSV") from None
    expected = ["timestamp", *RAW_FIELDS]
    unknown = set(header) - set(expected)
    if unknown:
        raise SchemaError(f"unknown columns: {sorted(unknown)}")
    if set(header) != set(expected):
        raise SchemaError(f"missing columns: {sorted(set(expected) - set(header))}")
    pos = {name: header.index(name) for name in expected}
    times, cols = [], {name: [] for name in RAW_FIELDS}
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        try:
            times.append(_parse_timestamp(row[pos["timestamp"]]))
            for name in RAW_FIELDS:
                cols[name].append(_parse_value(row[pos[name]]))
        except (ValueError, IndexError) as exc:
            raise IngestError(f"line {lineno}: {exc}") from exc
    return RawRows(np.array(times, dtype="datetime64[h]"), {k: np.array(v, dtype=float) for k, v in cols.items()})


def write_csv(rows: RawRows, dest) -> None:
    if isinstance(dest, (str, Path)):
        with open(dest, "w", newline="") as fh:
            return write_csv(rows, fh)
    w = csv.writer(dest, lineterminator="\n")
    w.writerow(["timestamp", *RAW_FIELDS])
    for i, ts in enumerate(rows.timestamps):
        cells = []
        for name in RAW_FIELDS:
            v = rows.values[name][i]
            cells.append("" if np.isnan(v) else repr(round(float(v), 4)))
        w.writerow([str(ts) + ":00:00Z", *cells])


def concat_rows(parts: Sequence[RawRows]) -> RawRows:
    return RawRows(
        np.concatenate([p.timestamps for p in parts]),
        {k: np.concatenate([p.values[k] for p in parts]) for k in RAW_FIELDS},
    )


def ingest(source) -> RawRows:
    """Load raw hourly rows from a CSV path/stream, a directory of CSVs, or a POWER locator.

    A POWER locator is a dict ``{"latitude", "longitude", "years", "cache_dir"}``
    and goes through :mod:`pissm.power`.
    """
    if isinstance(source, dict):
        from .power import fetch_years

        return fetch_years(source["latitude"], source["longitude"], source["years"], source["cache_dir"])
    if isinstance(source, (str, Path)) and Path(source).is_dir():
        files = sorted(Path(source).glob("*.csv"))
        if not files:
            raise IngestError(f"no CSV files in {source}")
        return concat_rows([read_csv(f) for f in files])
    if isinstance(source, (str, Path)) and not Path(source).exists():
        raise IngestError(f"{source} does not exist")
    return read_csv(source)


# ----------------------------------------------------------- clean/align


def _interpolate_gaps(values: np.ndarray, max_gap: int) -> tuple[np.ndarray, np.ndarray]:
    """Linearly fill NaN runs of length <= max_gap bounded by data on both sides."""
    out = values.copy()
    filled = np.zeros(len(values), dtype=bool)
    isnan = np.isnan(values)
    if not isnan.any():
        return out, filled
    idx = np.arange(len(values))
    # run starts/ends of NaN blocks
    d = np.diff(np.concatenate([[0], isnan.astype(int), [0]]))
    starts, ends = np.flatnonzero(d == 1), np.flatnonzero(d == -1)
    for s, e in zip(starts, ends):
        if e - s > max_gap or s == 0 or e == len(values):
            continue
        left, right = s - 1, e
        w = (idx[s:e] - left) / (right - left)
        out[s:e] = values[left] + w * (values[right] - values[left])
        filled[s:e] = True
    return out, filled


def clean_align(rows: RawRows, max_gap: int = 3) -> Timeline:
    """Put rows on a strictly increasing hourly grid and bridge short gaps.

    Duplicates keep their first occurrence; negative irradiance is treated as
    missing. Gaps of at most ``max_gap`` hours are linearly interpolated per
    field and flagged; longer gaps stay missing.
    """
    if len(rows) == 0:
        raise IngestError("no rows to clean")
    ts = rows.timestamps.astype("datetime64[h]")
    _, first = np.unique(ts, return_index=True)  # sorted unique, first occurrence
    if len(first) < len(ts):
        log.info("dropped %d duplicate timestamps", len(ts) - len(first))
    ts_u = ts[first]
    grid = np.arange(ts_u[0], ts_u[-1] + np.timedelta64(1, "h"), dtype="datetime64[h]")
    pos = (ts_u - grid[0]).astype(int)

    columns = {}
    for name in RAW_FIELDS:
        col = np.full(len(grid), np.nan)
        col[pos] = rows.values[name][first]
        if name in RADIATIVE:
            col[col < 0] = np.nan
        if name == "rh2m":
            col = np.clip(col, 0.0, 100.0)
        columns[name] = col
    return bridge_gaps(Timeline(grid, columns, np.full(len(grid), OBSERVED, dtype=np.int8)), max_gap)


def bridge_gaps(tl: Timeline, max_gap: int) -> Timeline:
    """Interpolate short NaN runs of the raw fields using only values inside ``tl``."""
    columns = dict(tl.columns)
    any_missing, any_filled = np.zeros(len(tl), bool), np.zeros(len(tl), bool)
    # never bridge across a jump in the grid (an excluded year, say)
    breaks = np.flatnonzero(np.diff(tl.timestamps.astype(np.int64)) != 1) + 1
    bounds = list(zip([0, *breaks], [*breaks, len(tl)]))
    for name in RAW_FIELDS:
        col = tl.columns[name].copy()
        for a, b in bounds:
            col[a:b], filled = _interpolate_gaps(col[a:b], max_gap)
            any_filled[a:b] |= filled
        any_missing |= np.isnan(col)
        columns[name] = col
    quality = np.full(len(tl), OBSERVED, dtype=np.int8)
    quality[any_filled] = INTERPOLATED
    quality[any_missing] = MISSING
    return Timeline(tl.timestamps, columns, quality)


# --------------------------------------------------------- derive & mask


def derive_features(tl: Timeline, site: SiteConfig) -> Timeline:
    """Add solar geometry, clear-sky GHI, KT and the six cyclical encodings.

    Night hours have their radiative fields clamped to zero first, so KT is
    zero there as well.
    """
    out = tl.copy()
    sun = solar.solar_arrays(out.timestamps, site)
    out.columns["sza"] = sun["zenith_angle"]
    out.columns["ghi_clear"] = sun["clear_sky_ghi"]
    out.columns["is_night"] = sun["is_night"]
    out = apply_night_mask(out)
    ghi = out["ghi"]
    valid = ~np.isnan(ghi)
    kt = np.full(len(out), np.nan)
    kt[valid] = solar.clearness_index(ghi[valid], out["ghi_clear"][valid], site)
    out.columns["kt"] = kt

    local = out.timestamps + np.timedelta64(int(round(site.timezone_meridian / 15.0 * 60)), "m")
    days = local.astype("datetime64[D]")
    hour = (local - days).astype("timedelta64[m]").astype(float) / 60.0
    doy = (days - local.astype("datetime64[Y]").astype("datetime64[D]")).astype(int) + 1
    month = local.astype("datetime64[M]").astype(int) % 12 + 1
    out.columns["sin_hour"], out.columns["cos_hour"] = solar.cyclical_encode(hour, 24)
    out.columns["sin_day"], out.columns["cos_day"] = solar.cyclical_encode(doy, 365)
    out.columns["sin_month"], out.columns["cos_month"] = solar.cyclical_encode(month, 12)
    return out


def apply_night_mask(tl: Timeline) -> Timeline:
    """Zero GHI, DNI and DHI wherever ``is_night`` holds (SZA >= 90 inclusive)."""
    if "is_night" not in tl.columns:
        raise ValueError("night flags missing; derive solar geometry first")
    out = tl.copy()
    night = out["is_night"].astype(bool)
    for name in RADIATIVE:
        out.columns[name][night] = 0.0
    # a masked hour is a known zero, not a gap
    if night.any():
        still_missing = np.zeros(len(out), bool)
        for name in RAW_FIELDS:
            still_missing |= np.isnan(out.columns[name])
        out.quality[night & ~still_missing & (out.quality == MISSING)] = OBSERVED
    return out


def prepare_timeline(rows: RawRows, site: SiteConfig, max_gap: int = 3) -> Timeline:
    return derive_features(clean_align(rows, max_gap=max_gap), site)


# ------------------------------------------------------------------ split


def chronological_split(tl: Timeline, spec: SplitSpec) -> dict[str, Timeline]:
    """Split by time: development era 70/15/15, stress years held out, excluded years dropped."""
    if np.any(np.diff(tl.timestamps.astype(np.int64)) <= 0):
        raise ValueError("timeline must be strictly increasing")
    years = tl.years
    keep = ~np.isin(years, spec.excluded_years)
    dev_mask = keep & (years >= spec.dev_range[0]) & (years <= spec.dev_range[1])
    dev = tl.subset(dev_mask)
    n = len(dev)
    n_train = int(round(n * spec.train_frac))
    n_val = int(round(n * spec.val_frac))
    parts = {
        "train": dev.subset(slice(0, n_train)),
        "val": dev.subset(slice(n_train, n_train + n_val)),
        "test_internal": dev.subset(slice(n_train + n_val, n)),
    }
    if spec.stress_range:
        stress_mask = keep & (years >= spec.stress_range[0]) & (years <= spec.stress_range[1])
        parts["stress"] = tl.subset(stress_mask)
    for name in ("train", "val", "test_internal"):
        if len(parts[name]) == 0:
            raise ValueError(f"split {name!r} is empty")
    return parts


# ---------------------------------------------------------- normalization


def feature_matrix(tl: Timeline) -> np.ndarray:
    return np.stack([tl[name] for name in FEATURES], axis=1)


def fit_norm_stats(train: Timeline) -> NormStats:
    """Population mean/std per feature and target min/max, over non-missing train hours."""
    ok = ~train.missing
    X = feature_matrix(train)[ok]
    y = train["ghi"][ok]
    if len(y) == 0:
        raise ValueError("no usable training hours to fit normalization")
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    low = std < SIGMA_FLOOR
    if low.any():
        warnings.warn(
            f"constant features {[FEATURES[i] for i in np.flatnonzero(low)]}; std floored at {SIGMA_FLOOR}",
            RuntimeWarning,
            stacklevel=2,
        )
        std = np.where(low, SIGMA_FLOOR, std)
    tmin, tmax = float(y.min()), float(y.max())
    if not tmax > tmin:
        raise ValueError("target is constant on the training split")
    return NormStats(mean, std, tmin, tmax, "train")


def apply_norm(tl: Timeline, stats: NormStats) -> tuple[np.ndarray, np.ndarray]:
    """Return z-scored features (T, F) and min-max scaled GHI (T,)."""
    return stats.normalize_features(feature_matrix(tl)), stats.normalize_target(tl["ghi"])


# --------------------------------------------------------------- samples


def gate_scalars(sza, kt):
    """Scale gate inputs to [0, 1]: SZA / 180 and clip(KT, 0, 1.2) / 1.2."""
    return np.clip(np.asarray(sza) / 180.0, 0.0, 1.0), np.clip(np.asarray(kt), 0.0, KT_CLIP) / KT_CLIP


def build_samples(tl: Timeline, stats: NormStats, spec: HankelSpec | None = None) -> SampleSet:
    """Window a normalized timeline into Hankel samples for one-step-ahead GHI.

    A sample ending at hour ``t`` needs hours ``t-23 .. t+1`` all non-missing.
    Its gates are SZA at ``t+1`` (known in advance) and KT at ``t``.
    """
    spec = spec or HankelSpec()
    n = spec.window
    T = len(tl)
    if T < n + 1:
        return SampleSet.empty(spec)
    feats, target = apply_norm(tl, stats)
    bad = tl.missing | ~np.all(np.isfinite(feats), axis=1) | ~np.isfinite(target)
    # bad_count[j] = number of bad hours in [j, j + n]
    csum = np.concatenate([[0], np.cumsum(bad)])
    starts = np.arange(0, T - n)
    ok = (csum[starts + n + 1] - csum[starts]) == 0
    starts = starts[ok]
    skipped = int((~ok).sum())
    t_last = starts + n - 1
    windows = np.stack([feats[s : s + n] for s in starts]) if len(starts) else np.zeros((0, n, spec.features))
    X = unroll(windows, spec).astype(np.float32)
    g_sza, g_kt = gate_scalars(tl["sza"][t_last + 1], tl["kt"][t_last])
    return SampleSet(
        X=X,
        gates=np.stack([g_sza, g_kt], axis=1).astype(np.float32),
        y=target[t_last + 1],
        y_raw=tl["ghi"][t_last + 1].astype(np.float64),
        night=tl["is_night"][t_last + 1].astype(bool),
        times=tl.timestamps[t_last + 1],
        skipped=skipped,
    )


def window_inputs(tl: Timeline, stats: NormStats, site: SiteConfig, spec: HankelSpec | None = None):
    """Model inputs for forecasting the hour after the last row of ``tl``.

    Uses the final ``spec.window`` hours, which must all be usable. Returns
    ``(hankel_input, gate_sza, gate_kt, target_time, target_is_night)``.
    """
    spec = spec or HankelSpec()
    if len(tl) < spec.window:
        raise ValueError(f"need {spec.window} hourly rows, got {len(tl)}")
    win = tl.subset(slice(len(tl) - spec.window, len(tl)))
    feats = stats.normalize_features(feature_matrix(win))
    if win.missing.any() or not np.all(np.isfinite(feats)):
        raise ValueError("input window has missing hours")
    target_time = win.timestamps[-1] + np.timedelta64(1, "h")
    sun = solar.solar_arrays(np.array([target_time]), site)
    g_sza, g_kt = gate_scalars(sun["zenith_angle"][0], win["kt"][-1])
    X = unroll(feats, spec).astype(np.float32)
    return X, float(g_sza), float(g_kt), target_time, bool(sun["is_night"][0])


# ------------------------------------------------------- prepared dataset


@dataclass
class PreparedDataset:
    splits: dict[str, Timeline]
    stats: NormStats
    split_spec: SplitSpec
    site: SiteConfig
    max_gap: int = 3
    meta: dict = field(default_factory=dict)

    def samples(self, name: str, spec: HankelSpec | None = None) -> SampleSet:
        return build_samples(self.splits[name], self.stats, spec)


def prepare(rows: RawRows, site: SiteConfig, split_spec: SplitSpec, max_gap: int = 3) -> PreparedDataset:
    # split the raw grid first so no gap is bridged with values from a later split
    grid = clean_align(rows, max_gap=0)
    splits = {name: derive_features(bridge_gaps(part, max_gap), site) for name, part in chronological_split(grid, split_spec).items()}
    return PreparedDataset(splits, fit_norm_stats(splits["train"]), split_spec, site, max_gap)


_COLUMNS = RAW_FIELDS + ("ghi_clear", "kt", "sza", "sin_month", "cos_month", "sin_day", "cos_day", "sin_hour", "cos_hour")


def save_dataset(ds: PreparedDataset, path) -> None:
    """Write an ``.npz`` with a versioned JSON header holding split spec, stats and site."""
    header = {
        "format": "pissm-dataset",
        "version": DATASET_VERSION,
        "split_spec": ds.split_spec.to_dict(),
        "norm_stats": ds.stats.to_dict(),
        "site": asdict(ds.site),
        "max_gap": ds.max_gap,
        "splits": list(ds.splits),
        "features": list(FEATURES),
        **ds.meta,
    }
    arrays = {"header": np.frombuffer(json.dumps(header).encode(), dtype=np.uint8)}
    for name, tl in ds.splits.items():
        arrays[f"{name}/timestamps"] = tl.timestamps.astype(np.int64)
        arrays[f"{name}/quality"] = tl.quality
        arrays[f"{name}/is_night"] = tl["is_night"].astype(bool)
        for col in _COLUMNS:
            arrays[f"{name}/{col}"] = tl[col]
    buf = io.BytesIO()
    np.savez_compressed(buf, **arrays)
    Path(path).write_bytes(buf.getvalue())


def load_dataset(path) -> PreparedDataset:
    with np.load(path) as z:
        header = json.loads(bytes(z["header"]).decode())
        if header.get("format") != "pissm-dataset" or header.get("version") != DATASET_VERSION:
            raise IngestError(f"{path}: not a version-{DATASET_VERSION} pissm dataset")
        splits = {}
        for name in header["splits"]:
            cols = {col: z[f"{name}/{col}"] for col in _COLUMNS}
            cols["is_night"] = z[f"{name}/is_night"]
            splits[name] = Timeline(
                z[f"{name}/timestamps"].astype("datetime64[h]"),
                cols,
                z[f"{name}/quality"],
            )
    meta = {k: v for k, v in header.items() if k not in {"format", "version", "split_spec", "norm_stats", "site", "max_gap", "splits", "features"}}
    return PreparedDataset(
        splits,
        NormStats.from_dict(header["norm_stats"]),
        SplitSpec.from_dict(header["split_spec"]),
        SiteConfig(**header["site"]),
        header["max_gap"],
        meta,
    )
