"""Flat run configuration: ``key = value`` lines, overridable from the command line."""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, fields
from pathlib import Path

from .features import SplitSpec
from .model import ModelConfig
from .power import CACHE_ENV
from .solar import SiteConfig
from .train import TrainConfig


@dataclass
class RunConfig:
    # site
    latitude: float = 14.7
    longitude: float = 33.2
    timezone_meridian: float = 30.0
    solar_constant: float = 1361.0
    transmission_coeff: float = 0.75
    kt_epsilon: float = 1e-6
    equation_of_time: bool = False
    # data and split
    data_source: str = ""
    max_gap: int = 3
    train_frac: float = 0.70
    val_frac: float = 0.15
    test_frac: float = 0.15
    dev_start: int = 2010
    dev_end: int = 2015
    stress_start: int = 2020
    stress_end: int = 2024
    excluded_years: str = "2025"
    # model
    window: int = 24
    subwindow: int = 5
    conv_filters: int = 64
    hidden: int = 64
    fc_units: int = 64
    dropout_rate: float = 0.2
    delta_t: float = 1.0
    # training
    epochs: int = 100
    batch_size: int = 256
    lr: float = 1e-3
    plateau_factor: float = 0.5
    plateau_patience: int = 15
    plateau_threshold: float = 1e-4
    min_lr: float = 1e-6
    grad_clip_norm: float = 1.0
    weight_decay: float = 1e-5
    early_stop_patience: int = 30
    seed: int = 0
    # paths
    cache_dir: str = ""
    dataset_file: str = "pissm_dataset.npz"
    model_file: str = "pissm_model.bin"
    report_dir: str = "pissm_report"
    bench_iters: int = 1000

    # --------------------------------------------------------------- io

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    @classmethod
    def load(cls, path=None, overrides: dict | None = None) -> "RunConfig":
        values = {}
        if path is not None:
            text = Path(path).read_text()
            parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
            parser.optionxform = str
            parser.read_string("[run]\n" + text)
            values.update(parser["run"])
        values.update({k: v for k, v in (overrides or {}).items() if v is not None})
        unknown = set(values) - set(cls.keys())
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls()
        for f in fields(cls):
            if f.name in values:
                setattr(cfg, f.name, _coerce(values[f.name], type(getattr(cfg, f.name))))
        return cfg

    def dumps(self) -> str:
        return "".join(f"{k} = {getattr(self, k)}\n" for k in self.keys())

    # ------------------------------------------------------ components

    def site(self) -> SiteConfig:
        return SiteConfig(
            latitude=self.latitude,
            longitude=self.longitude,
            timezone_meridian=self.timezone_meridian,
            solar_constant=self.solar_constant,
            transmission_coeff=self.transmission_coeff,
            kt_epsilon=self.kt_epsilon,
            equation_of_time=self.equation_of_time,
        )

    def split_spec(self) -> SplitSpec:
        stress = (self.stress_start, self.stress_end) if self.stress_start <= self.stress_end else ()
        return SplitSpec(
            train_frac=self.train_frac,
            val_frac=self.val_frac,
            test_frac=self.test_frac,
            dev_range=(self.dev_start, self.dev_end),
            stress_range=stress,
            excluded_years=self.excluded,
        )

    @property
    def excluded(self) -> tuple[int, ...]:
        return tuple(int(y) for y in str(self.excluded_years).replace(",", " ").split())

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            window=self.window,
            subwindow=self.subwindow,
            conv_filters=self.conv_filters,
            hidden=self.hidden,
            fc_units=self.fc_units,
            dropout_rate=self.dropout_rate,
            seed=self.seed,
            delta_t=self.delta_t,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            lr=self.lr,
            plateau_factor=self.plateau_factor,
            plateau_patience=self.plateau_patience,
            plateau_threshold=self.plateau_threshold,
            min_lr=self.min_lr,
            grad_clip_norm=self.grad_clip_norm,
            weight_decay=self.weight_decay,
            early_stop_patience=self.early_stop_patience,
            seed=self.seed,
        )

    def resolved_cache_dir(self) -> Path:
        if self.cache_dir:
            return Path(self.cache_dir)
        from .power import default_cache_dir

        return default_cache_dir()

    def all_years(self) -> list[int]:
        last = max(self.dev_end, self.stress_end)
        return list(range(self.dev_start, last + 1))


KEY_HELP = {
    "latitude": "site latitude, degrees north",
    "longitude": "site longitude, degrees east",
    "timezone_meridian": "standard meridian of the local time zone, degrees",
    "solar_constant": "extraterrestrial irradiance I0, W/m2",
    "transmission_coeff": "clear-sky atmospheric transmission",
    "kt_epsilon": "denominator guard for the clearness index",
    "equation_of_time": "apply the equation-of-time correction",
    "data_source": "CSV file or directory; empty means the POWER cache",
    "max_gap": "longest gap (hours) bridged by interpolation",
    "train_frac": "training share of the development era",
    "val_frac": "validation share of the development era",
    "test_frac": "internal test share of the development era",
    "dev_start": "first development year",
    "dev_end": "last development year",
    "stress_start": "first stress-test year",
    "stress_end": "last stress-test year",
    "excluded_years": "years dropped from every split",
    "window": "input window length, hours",
    "subwindow": "Hankel subwindow length",
    "conv_filters": "convolution channels",
    "hidden": "state size of the SSM",
    "fc_units": "width of the dense head",
    "dropout_rate": "dropout after the convolution",
    "delta_t": "SSM discretization step",
    "epochs": "maximum training epochs",
    "batch_size": "mini-batch size",
    "lr": "initial Adam learning rate",
    "plateau_factor": "LR multiplier on a plateau",
    "plateau_patience": "epochs without improvement before halving",
    "plateau_threshold": "relative improvement that resets patience",
    "min_lr": "learning-rate floor",
    "grad_clip_norm": "global gradient-norm clip",
    "weight_decay": "decoupled weight decay",
    "early_stop_patience": "epochs without improvement before stopping",
    "seed": "seed for init, shuffling and dropout",
    "cache_dir": f"POWER cache directory (env {CACHE_ENV}, else ~/.cache/pissm)",
    "dataset_file": "prepared dataset path",
    "model_file": "trained model path",
    "report_dir": "directory for evaluation outputs",
    "bench_iters": "timed iterations for bench",
}


def help_text() -> str:
    defaults = RunConfig()
    width = max(map(len, RunConfig.keys()))
    lines = ["config keys (key = value, one per line):"]
    for k in RunConfig.keys():
        lines.append(f"  {k.ljust(width)}  {KEY_HELP[k]} [default: {getattr(defaults, k)!s}]")
    return "\n".join(lines)


def _coerce(text, kind):
    if isinstance(text, kind) and not (kind is int and isinstance(text, bool)):
        return text
    s = str(text).strip()
    if kind is bool:
        if s.lower() in {"1", "true", "yes", "on"}:
            return True
        if s.lower() in {"0", "false", "no", "off"}:
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if kind is int:
        return int(s)
    if kind is float:
        return float(s)
    return s


def env_cache_dir() -> str | None:
    return os.environ.get(CACHE_ENV)
