"""NASA POWER hourly point client with an on-disk cache keyed by (lat, lon, year)."""

from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable

import numpy as np

from .features import FILL_VALUE, RAW_FIELDS, IngestError, RawRows, SchemaError, concat_rows, read_csv, write_csv

log = logging.getLogger(__name__)

URL = "https://power.larc.nasa.gov/api/temporal/hourly/point"
PARAMETERS = {
    "ALLSKY_SFC_SW_DWN": "ghi",
    "ALLSKY_SFC_SW_DNI": "dni",
    "ALLSKY_SFC_SW_DIFF": "dhi",
    "T2M": "t2m",
    "RH2M": "rh2m",
    "WS10M": "ws10m",
    "PS": "ps",
}
CACHE_ENV = "PISSM_CACHE_DIR"


def default_cache_dir() -> Path:
    return Path(os.environ.get(CACHE_ENV, Path.home() / ".cache" / "pissm"))


def cache_stem(lat: float, lon: float, year: int) -> str:
    return f"power_{lat:.3f}_{lon:.3f}_{year}"


def request_params(lat: float, lon: float, year: int) -> dict:
    return {
        "parameters": ",".join(PARAMETERS),
        "community": "RE",
        "latitude": lat,
        "longitude": lon,
        "start": f"{year}0101",
        "end": f"{year}1231",
        "format": "JSON",
        "time-standard": "UTC",
    }


def parse_power_json(payload: dict) -> RawRows:
    """Convert a POWER hourly JSON payload into raw rows (fill value -> NaN)."""
    try:
        block = payload["properties"]["parameter"]
    except (KeyError, TypeError) as exc:
        raise IngestError("POWER payload lacks properties.parameter") from exc
    unknown = set(block) - set(PARAMETERS)
    if unknown:
        raise SchemaError(f"unexpected POWER parameters: {sorted(unknown)}")
    missing = set(PARAMETERS) - set(block)
    if missing:
        raise SchemaError(f"POWER payload missing parameters: {sorted(missing)}")
    keys = sorted(block["ALLSKY_SFC_SW_DWN"])
    try:
        times = np.array([f"{k[:4]}-{k[4:6]}-{k[6:8]}T{k[8:10]}" for k in keys], dtype="datetime64[h]")
    except ValueError as exc:
        raise IngestError(f"bad POWER timestamp key: {exc}") from exc
    values = {}
    for pname, field in PARAMETERS.items():
        col = np.array([float(block[pname].get(k, FILL_VALUE)) for k in keys])
        col[col == FILL_VALUE] = np.nan
        values[field] = col
    return RawRows(times, {k: values[k] for k in RAW_FIELDS})


def _http_get(params: dict) -> dict:
    import requests

    resp = requests.get(URL, params=params, timeout=120)
    resp.raise_for_status()
    return resp.json()


def fetch_year(lat: float, lon: float, year: int, cache_dir, get: Callable[[dict], dict] | None = None) -> tuple[RawRows, bool]:
    """Rows for one year, from cache when present. Returns (rows, downloaded)."""
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    stem = cache_stem(lat, lon, year)
    csv_path = cache_dir / f"{stem}.csv"
    if csv_path.exists():
        return read_csv(csv_path), False
    json_path = cache_dir / f"{stem}.json"
    if json_path.exists():
        payload = json.loads(json_path.read_text())
        downloaded = False
    else:
        try:
            payload = (get or _http_get)(request_params(lat, lon, year))
        except Exception as exc:  # network stack raises many types
            raise IngestError(f"POWER download failed for {year}: {exc}") from exc
        tmp = json_path.with_suffix(".json.part")
        tmp.write_text(json.dumps(payload))
        tmp.replace(json_path)
        downloaded = True
    part = csv_path.with_suffix(".csv.part")
    write_csv(parse_power_json(payload), part)
    part.replace(csv_path)
    # return what later cached reads will see
    return read_csv(csv_path), downloaded


def fetch_years(lat, lon, years, cache_dir, get=None, max_workers: int = 2) -> RawRows:
    """Fetch several years with bounded concurrency; completed years stay cached on failure."""
    years = list(years)
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        futures = {y: pool.submit(fetch_year, lat, lon, y, cache_dir, get) for y in years}
    errors = []
    parts = []
    for y in years:
        try:
            parts.append(futures[y].result()[0])
        except IngestError as exc:
            errors.append(str(exc))
    if errors:
        raise IngestError("; ".join(errors))
    return concat_rows(parts)
