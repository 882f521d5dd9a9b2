"""The PISSM network: conv -> SSM -> layer norm -> physics gate -> dense head.

Parameters live in an ordered mapping of named tensors; that order is the
serialization order. The eval path is plain numpy on the same functions the
training graph uses, so the edge runtime can replay it exactly.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, fields
from typing import Iterator

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .features import NormStats, SampleSet, TrainingSample
from .solar import SolarState
from .ssm import SsmParams, ssm_layer

PARAM_BUDGET = 40_000
MAGIC = b"PISM"
FORMAT_VERSION = 1
FLAG_HAS_STATS = 1
OUT_BIAS_INIT = 0.25


class ModelFormatError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    features: int = 15
    window: int = 24
    subwindow: int = 5
    conv_filters: int = 64
    hidden: int = 64
    fc_units: int = 64
    dropout_rate: float = 0.2
    seed: int = 0
    delta_t: float = 1.0

    def __post_init__(self):
        if not 1 <= self.subwindow <= self.window:
            raise ValueError("subwindow must lie in 1..window")
        if self.conv_filters != self.hidden:
            raise ValueError("the SSM is channel-wise: conv_filters must equal hidden")

    @property
    def rows(self) -> int:
        return self.window - self.subwindow + 1

    @property
    def width(self) -> int:
        return self.subwindow * self.features


@dataclass
class GateInputs:
    sza_scaled: float
    kt_scaled: float


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    H, W, U = cfg.hidden, cfg.width, cfg.fc_units
    return {
        "conv.kernel": (3, W, cfg.conv_filters),
        "conv.bias": (cfg.conv_filters,),
        "ssm.theta": (H,),
        "ssm.B": (H, H),
        "ssm.C": (H, H),
        "ssm.D": (H,),
        "ln.gain": (H,),
        "ln.bias": (H,),
        "gate_sza.weight": (1, H),
        "gate_sza.bias": (H,),
        "gate_kt.weight": (1, H),
        "gate_kt.bias": (H,),
        "fc.weight": (H, U),
        "fc.bias": (U,),
        "out.weight": (U, 1),
        "out.bias": (1,),
    }


# excluded from weight decay
NO_DECAY = frozenset(name for name in param_shapes(ModelConfig()) if name.endswith(".bias") or name.startswith("ln."))


class ModelParams:
    """Named trainable tensors in a fixed order."""

    def __init__(self, tensors: dict[str, Tensor], config: ModelConfig):
        self.tensors = tensors
        self.config = config

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __iter__(self) -> Iterator[Tensor]:
        return iter(self.tensors.values())

    def items(self):
        return self.tensors.items()

    @property
    def dtype(self):
        return next(iter(self)).dtype

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: t.data for k, t in self.tensors.items()}

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray], config: ModelConfig, requires_grad: bool = True) -> "ModelParams":
        return cls({k: Tensor(np.array(v), requires_grad=requires_grad, name=k) for k, v in arrays.items()}, config)

    def copy(self) -> "ModelParams":
        return ModelParams.from_arrays(self.arrays(), self.config)

    def astype(self, dtype) -> "ModelParams":
        return ModelParams.from_arrays({k: v.astype(dtype) for k, v in self.arrays().items()}, self.config)

    def zero_grad(self):
        for t in self:
            t.zero_grad()

    def equal(self, other: "ModelParams") -> bool:
        a, b = self.arrays(), other.arrays()
        return a.keys() == b.keys() and all(
            a[k].dtype == b[k].dtype and np.array_equal(a[k], b[k]) for k in a
        )


def init_model(cfg: ModelConfig, dtype=np.float32) -> ModelParams:
    """Seeded initialization: fan-in scaled normals, SSM per :meth:`SsmParams.init`."""
    rng = np.random.default_rng(cfg.seed)
    shapes = param_shapes(cfg)
    H = cfg.hidden

    def fan_in(shape, fan):
        return rng.normal(0.0, 1.0 / np.sqrt(fan), shape)

    ssm = SsmParams.init(H, rng, dtype=np.float64, delta_t=cfg.delta_t)
    arrays = {
        "conv.kernel": fan_in(shapes["conv.kernel"], 3 * cfg.width),
        "conv.bias": np.zeros(cfg.conv_filters),
        "ssm.theta": ssm.theta,
        "ssm.B": ssm.B,
        "ssm.C": ssm.C,
        "ssm.D": ssm.D_diag,
        "ln.gain": np.ones(H),
        "ln.bias": np.zeros(H),
        "gate_sza.weight": fan_in((1, H), H),
        "gate_sza.bias": np.zeros(H),
        "gate_kt.weight": fan_in((1, H), H),
        "gate_kt.bias": np.zeros(H),
        "fc.weight": fan_in((H, cfg.fc_units), H),
        "fc.bias": np.zeros(cfg.fc_units),
        "out.weight": fan_in((cfg.fc_units, 1), cfg.fc_units),
        # positive so the terminal ReLU starts live (targets are min-max scaled)
        "out.bias": np.full(1, OUT_BIAS_INIT),
    }
    return ModelParams.from_arrays({k: v.astype(dtype) for k, v in arrays.items()}, cfg)


def count_params(params: ModelParams | ModelConfig) -> int:
    if isinstance(params, ModelConfig):
        return sum(int(np.prod(s)) for s in param_shapes(params).values())
    return sum(t.data.size for t in params)


def within_budget(n_params: int, budget: int = PARAM_BUDGET) -> bool:
    return n_params < budget


def physics_gate(h_last: Tensor, sza: Tensor, kt: Tensor, params: ModelParams) -> Tensor:
    """Scale features by ``sigmoid(w_sza*sza + b_sza) * sigmoid(w_kt*kt + b_kt)``.

    ``h_last`` is (N, H); ``sza`` and ``kt`` are (N, 1) scaled gate scalars.
    """
    g_sza = ad.sigmoid(ad.linear(sza, params["gate_sza.weight"], params["gate_sza.bias"]))
    g_kt = ad.sigmoid(ad.linear(kt, params["gate_kt.weight"], params["gate_kt.bias"]))
    return ad.hadamard(ad.hadamard(h_last, g_sza), g_kt)


def forward(
    X,
    gates,
    params: ModelParams,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Batch forward pass: ``X`` is (N, m, k*F), ``gates`` is (N, 2) as (sza, kt).

    Returns the (N,) normalized prediction, non-negative by the terminal ReLU.
    """
    cfg = params.config
    dtype = params.dtype
    X = np.asarray(X, dtype=dtype)
    gates = np.asarray(gates, dtype=dtype)
    if X.ndim != 3 or X.shape[1:] != (cfg.rows, cfg.width):
        raise ValueError(f"expected input (N, {cfg.rows}, {cfg.width}), got {X.shape}")
    if gates.shape != (X.shape[0], 2):
        raise ValueError(f"expected gates ({X.shape[0]}, 2), got {gates.shape}")
    p = params
    h = ad.conv1d_same(Tensor(X), p["conv.kernel"], p["conv.bias"])
    h = ad.relu(h)
    h = ad.dropout(h, cfg.dropout_rate, training, rng)
    h = ssm_layer(h, p["ssm.theta"], p["ssm.B"], p["ssm.C"], p["ssm.D"], cfg.delta_t)
    h = ad.layer_norm(h, p["ln.gain"], p["ln.bias"])
    h = ad.last_step(h)
    h = physics_gate(h, Tensor(gates[:, 0:1].copy()), Tensor(gates[:, 1:2].copy()), p)
    h = ad.relu(ad.linear(h, p["fc.weight"], p["fc.bias"]))
    out = ad.flatten_last(ad.linear(h, p["out.weight"], p["out.bias"]))
    return ad.relu(out)


def predict_normalized(samples: SampleSet, params: ModelParams, batch_size: int = 1024) -> np.ndarray:
    """Eval-mode predictions for a whole sample set, batched."""
    outs = [
        forward(samples.X[i : i + batch_size], samples.gates[i : i + batch_size], params).data
        for i in range(0, len(samples), batch_size)
    ]
    return np.concatenate(outs) if outs else np.zeros(0, params.dtype)


def denormalize_clamped(y_norm, stats: NormStats, night) -> np.ndarray:
    """Map to W/m2, clamp at zero and force exact zero at night."""
    y = np.maximum(stats.denormalize_target(y_norm), 0.0)
    return np.where(np.asarray(night, bool), 0.0, y)


def predict_physical(sample: TrainingSample, params: ModelParams, stats: NormStats, solar_next: SolarState) -> float:
    """One-step forecast in W/m2 with the hard night clamp."""
    y = forward(sample.hankel_input[None], [[sample.gate_sza, sample.gate_kt]], params).data[0]
    return float(denormalize_clamped(y, stats, solar_next.is_night))


def predict_physical_set(samples: SampleSet, params: ModelParams, stats: NormStats) -> np.ndarray:
    return denormalize_clamped(predict_normalized(samples, params), stats, samples.night)


# ----------------------------------------------------------- model file


_CONFIG_FIELDS = ("features", "window", "subwindow", "conv_filters", "hidden", "fc_units")


def serialize(params: ModelParams, stats: NormStats | None, config: ModelConfig | None = None) -> bytes:
    """Encode a model as ``PISM`` bytes (little-endian, CRC32 trailer)."""
    cfg = config or params.config
    out = bytearray()
    out += MAGIC
    out += struct.pack("<HH", FORMAT_VERSION, FLAG_HAS_STATS if stats is not None else 0)
    out += struct.pack("<6I", *(getattr(cfg, f) for f in _CONFIG_FIELDS))
    if stats is not None:
        if stats.feature_mean.shape != (cfg.features,):
            raise ValueError("normalization stats do not match the feature count")
        out += np.asarray(stats.feature_mean, "<f8").tobytes()
        out += np.asarray(stats.feature_std, "<f8").tobytes()
        out += struct.pack("<2d", stats.target_min, stats.target_max)
    tensors = list(params.items())
    out += struct.pack("<I", len(tensors))
    for name, t in tensors:
        raw = name.encode()
        out += struct.pack("<H", len(raw)) + raw
        out += struct.pack("<B", t.data.ndim)
        out += struct.pack(f"<{t.data.ndim}I", *t.data.shape)
    for _, t in tensors:
        out += np.ascontiguousarray(t.data, dtype="<f4").tobytes()
    out += struct.pack("<I", zlib.crc32(bytes(out)) & 0xFFFFFFFF)
    return bytes(out)


def deserialize(blob: bytes) -> tuple[ModelParams, NormStats | None, ModelConfig]:
    """Decode and verify a model file; nothing is returned on any error."""
    if len(blob) < 4 + 4 + 24 + 4 + 4:
        raise ModelFormatError("model file truncated")
    if blob[:4] != MAGIC:
        raise ModelFormatError("bad magic")
    (crc,) = struct.unpack_from("<I", blob, len(blob) - 4)
    if zlib.crc32(blob[:-4]) & 0xFFFFFFFF != crc:
        raise ModelFormatError("checksum mismatch")
    version, flags = struct.unpack_from("<HH", blob, 4)
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported format version {version}")
    off = 8
    vals = struct.unpack_from("<6I", blob, off)
    off += 24
    cfg = ModelConfig(**dict(zip(_CONFIG_FIELDS, vals)))
    stats = None
    if flags & FLAG_HAS_STATS:
        F = cfg.features
        mean = np.frombuffer(blob, "<f8", F, off).astype(np.float64)
        off += 8 * F
        std = np.frombuffer(blob, "<f8", F, off).astype(np.float64)
        off += 8 * F
        tmin, tmax = struct.unpack_from("<2d", blob, off)
        off += 16
        stats = NormStats(mean, std, tmin, tmax, "train")
    (count,) = struct.unpack_from("<I", blob, off)
    off += 4
    table = []
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", blob, off)
        off += 2
        name = blob[off : off + nlen].decode()
        off += nlen
        (rank,) = struct.unpack_from("<B", blob, off)
        off += 1
        dims = struct.unpack_from(f"<{rank}I", blob, off)
        off += 4 * rank
        table.append((name, dims))
    expected = param_shapes(cfg)
    if {n: tuple(d) for n, d in table} != expected:
        raise ModelFormatError("shape table does not match the configuration")
    arrays = {}
    for name, dims in table:
        n = int(np.prod(dims))
        arrays[name] = np.frombuffer(blob, "<f4", n, off).astype(np.float32).reshape(dims)
        off += 4 * n
    if off != len(blob) - 4:
        raise ModelFormatError("trailing bytes after weight payload")
    return ModelParams.from_arrays(arrays, cfg), stats, cfg


def config_dict(cfg: ModelConfig) -> dict:
    return {f.name: getattr(cfg, f.name) for f in fields(cfg)}
