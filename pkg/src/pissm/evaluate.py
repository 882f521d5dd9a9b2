"""Metrics, the per-year stress test and the night-consistency audit.

All metrics are computed on physical values in W/m2 (equal to Wh/m2 on an
hourly grid). Each report carries a full-day set and a daytime-only set,
since zero-vs-zero night pairs inflate R2.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import solar
from .features import NormStats, SampleSet
from .model import ModelParams, predict_normalized, denormalize_clamped
from .solar import SiteConfig

# published headline figures; reported beside our metrics, never asserted
REFERENCE_RMSE = 20.45
REFERENCE_R2 = 0.987


def _check(pred, truth):
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {truth.shape}")
    if pred.size < 2:
        raise ValueError("need at least two values")
    return pred, truth


def rmse(pred, truth) -> float:
    pred, truth = _check(pred, truth)
    return float(np.sqrt(np.mean((pred - truth) ** 2)))


def mae(pred, truth) -> float:
    pred, truth = _check(pred, truth)
    return float(np.mean(np.abs(pred - truth)))


def r2(pred, truth) -> float:
    pred, truth = _check(pred, truth)
    ss_tot = float(np.sum((truth - truth.mean()) ** 2))
    if ss_tot == 0.0:
        raise ValueError("R2 is undefined for constant truth")
    return 1.0 - float(np.sum((pred - truth) ** 2)) / ss_tot


@dataclass
class Metrics:
    n_samples: int
    rmse: float | None
    mae: float | None
    r2: float | None

    @classmethod
    def of(cls, pred, truth) -> "Metrics":
        pred = np.asarray(pred, dtype=np.float64)
        truth = np.asarray(truth, dtype=np.float64)
        n = len(pred)
        if n < 2:
            return cls(n, None, None, None)
        try:
            score = r2(pred, truth)
        except ValueError:
            score = None
        return cls(n, rmse(pred, truth), mae(pred, truth), score)


@dataclass
class EvalReport:
    split: str
    n_samples: int
    rmse: float | None
    mae: float | None
    r2: float | None
    night_violation_count: int
    negative_count: int
    daytime: Metrics
    per_year: dict[int, "EvalReport"] = field(default_factory=dict)
    flagged_years: list[int] = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["per_year"] = {str(y): r.to_dict() for y, r in self.per_year.items()}
        return d


def night_audit(predictions, target_times, site: SiteConfig) -> int:
    """Count predictions above zero whose target hour is night at ``site``."""
    predictions = np.asarray(predictions, dtype=np.float64)
    if predictions.size == 0:
        return 0
    night = solar.solar_arrays(np.asarray(target_times, dtype="datetime64[h]"), site)["is_night"]
    return int(np.sum((predictions > 0) & night))


def _report(name: str, pred, truth, times, site) -> EvalReport:
    full = Metrics.of(pred, truth)
    night = solar.solar_arrays(times, site)["is_night"] if len(times) else np.zeros(0, bool)
    day = Metrics.of(pred[~night], truth[~night])
    return EvalReport(
        split=name,
        n_samples=full.n_samples,
        rmse=full.rmse,
        mae=full.mae,
        r2=full.r2,
        night_violation_count=night_audit(pred, times, site),
        negative_count=int(np.sum(np.asarray(pred) < 0)),
        daytime=day,
    )


def evaluate_predictions(name: str, pred, truth, times, site: SiteConfig, per_year: bool = False, years=None) -> EvalReport:
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    times = np.asarray(times, dtype="datetime64[h]")
    order = np.argsort(times, kind="stable")
    pred, truth, times = pred[order], truth[order], times[order]
    rep = _report(name, pred, truth, times, site)
    if per_year:
        ys = times.astype("datetime64[Y]").astype(int) + 1970
        wanted = sorted(set(years) if years is not None else set(ys.tolist()))
        for y in wanted:
            m = ys == y
            if m.sum() < 2:
                rep.flagged_years.append(int(y))
                continue
            rep.per_year[int(y)] = _report(f"{name}:{y}", pred[m], truth[m], times[m], site)
    return rep


def stress_test(
    params: ModelParams,
    stats: NormStats,
    samples: SampleSet,
    site: SiteConfig,
    years=None,
    name: str = "stress",
) -> tuple[EvalReport, np.ndarray]:
    """Per-year metrics plus a pooled aggregate over every valid sample.

    Years in ``years`` without samples are flagged and left out of the
    aggregate. Returns the report and the physical predictions.
    """
    pred = denormalize_clamped(predict_normalized(samples, params), stats, samples.night) if len(samples) else np.zeros(0)
    return evaluate_predictions(name, pred, samples.y_raw, samples.times, site, per_year=True, years=years), pred


def write_predictions_csv(path, times, truth, pred) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp", "truth", "prediction"])
        for t, y, p in zip(np.asarray(times, dtype="datetime64[h]"), truth, pred):
            w.writerow([f"{t}:00:00Z", f"{float(y):.4f}", f"{float(p):.4f}"])


def write_report_json(path, reports: dict[str, EvalReport], extra: dict | None = None) -> None:
    payload = {name: rep.to_dict() for name, rep in reports.items()}
    if extra:
        payload.update(extra)
    Path(path).write_text(json.dumps(payload, indent=2))


def _fmt(v, spec=".2f"):
    return "-" if v is None else format(v, spec)


def text_table(reports: dict[str, EvalReport], reference_columns: bool = True) -> str:
    """Aligned plain-text table, one row per split and per stress year."""
    head = ["split", "n", "rmse", "mae", "r2", "day_rmse", "day_r2", "night_viol"]
    if reference_columns:
        head += ["ref_rmse", "ref_r2"]
    rows = []
    for rep in reports.values():
        for r in [rep, *rep.per_year.values()]:
            row = [r.split, str(r.n_samples), _fmt(r.rmse), _fmt(r.mae), _fmt(r.r2, ".4f"),
                   _fmt(r.daytime.rmse), _fmt(r.daytime.r2, ".4f"), str(r.night_violation_count)]
            if reference_columns:
                row += [format(REFERENCE_RMSE, ".2f"), format(REFERENCE_R2, ".3f")]
            rows.append(row)
    widths = [max(len(h), *(len(r[i]) for r in rows)) if rows else len(h) for i, h in enumerate(head)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(head, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(c.rjust(w) if i else c.ljust(w) for i, (c, w) in enumerate(zip(r, widths))) for r in rows]
    return "\n".join(lines)
