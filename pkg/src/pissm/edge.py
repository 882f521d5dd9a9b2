"""Fixed-buffer, single-sample inference.

:class:`InferenceArena` allocates every buffer once at load time and then
replays the reference eval-mode forward pass with ``out=`` ufuncs, in the
same operation order, so its outputs are bit-identical to
:func:`pissm.model.predict_physical`. Steady-state allocations are counted
with the instrumented numpy allocator in :mod:`pissm.alloccount`.
"""

from __future__ import annotations

import math
import time

import numpy as np

from .alloccount import counting_allocations
from .model import ModelConfig, deserialize
from .solar import SolarState
from .ssm import _zoh_scale

LN_EPS = 1e-5


class EdgeError(RuntimeError):
    pass


class InferenceArena:
    def __init__(self, blob: bytes):
        params, stats, cfg = deserialize(blob)
        if stats is None:
            raise EdgeError("model file carries no normalization stats")
        self.config: ModelConfig = cfg
        self.target_min = float(stats.target_min)
        self.target_max = float(stats.target_max)
        f32 = np.float32
        w = {k: np.ascontiguousarray(v, dtype=f32) for k, v in params.arrays().items()}
        self.weights = w
        T, W, H, U = cfg.rows, cfg.width, cfg.hidden, cfg.fc_units

        self.Kr = w["conv.kernel"].reshape(3 * W, cfg.conv_filters)
        self.BT = w["ssm.B"].T
        self.CT = w["ssm.C"].T
        a = -np.exp(w["ssm.theta"])
        self.a_bar, self.b_scale, _, _ = _zoh_scale(a, cfg.delta_t)
        self.eps = np.asarray(LN_EPS, f32)
        # 0-d operands: python scalars would be boxed into fresh arrays per call
        self.zero = np.zeros((), f32)
        self.one = np.ones((), f32)
        self.n_channels = np.asarray(H, f32)
        self.all_finite = np.zeros((), bool)

        # scratch
        self.xp = np.zeros((T + 2, W), f32)
        self.x_in = self.xp[1 : T + 1]
        self.finite = np.zeros((T, W), bool)
        self.cols = np.zeros((T, 3 * W), f32)
        self.col_taps = [(self.cols[:, j * W : (j + 1) * W], self.xp[j : j + T]) for j in range(3)]
        self.conv = np.zeros((T, H), f32)
        self.bx = np.zeros((T, H), f32)
        self.v = np.zeros((T, H), f32)
        self.h = np.zeros(H, f32)
        self.hs = np.zeros((T, H), f32)
        self.v_rows = [self.v[t] for t in range(T)]
        self.hs_rows = [self.hs[t] for t in range(T)]
        self.y = np.zeros((T, H), f32)
        self.skip = np.zeros((T, H), f32)
        self.mean = np.zeros((T, 1), f32)
        self.xc = np.zeros((T, H), f32)
        self.sq = np.zeros((T, H), f32)
        self.var = np.zeros((T, 1), f32)
        self.inv = np.zeros((T, 1), f32)
        self.ln = np.zeros((T, H), f32)
        self.last = self.ln[T - 1 : T]
        self.gate_in = np.zeros((2, 1, 1), f32)
        self.z = np.zeros((2, 1, H), f32)
        self.e = np.zeros((2, 1, H), f32)
        self.den = np.zeros((2, 1, H), f32)
        self.pos = np.zeros((2, 1, H), f32)
        self.g = np.zeros((2, 1, H), f32)
        self.gmask = np.zeros((2, 1, H), bool)
        self.gated = np.zeros((1, H), f32)
        self.fc = np.zeros((1, U), f32)
        self.out = np.zeros((1, 1), f32)
        self.gate_params = [
            (self.gate_in[0], w["gate_sza.weight"], w["gate_sza.bias"], self.z[0], self.e[0], self.den[0], self.pos[0], self.g[0], self.gmask[0]),
            (self.gate_in[1], w["gate_kt.weight"], w["gate_kt.bias"], self.z[1], self.e[1], self.den[1], self.pos[1], self.g[1], self.gmask[1]),
        ]
        self._scratch = [
            self.xp, self.finite, self.cols, self.conv, self.bx, self.v, self.h, self.hs, self.y, self.skip,
            self.mean, self.xc, self.sq, self.var, self.inv, self.ln, self.gate_in, self.z, self.e, self.den,
            self.pos, self.g, self.gmask, self.gated, self.fc, self.out, self.a_bar, self.b_scale,
            self.eps, self.zero, self.one, self.n_channels, self.all_finite,
        ]

    # --------------------------------------------------------------- info

    @property
    def weight_bytes(self) -> int:
        return sum(v.nbytes for v in self.weights.values())

    @property
    def scratch_bytes(self) -> int:
        return sum(b.nbytes for b in self._scratch)

    @property
    def total_bytes(self) -> int:
        return self.weight_bytes + self.scratch_bytes

    def memory_report(self) -> dict:
        return {"weight_bytes": self.weight_bytes, "scratch_bytes": self.scratch_bytes, "total_bytes": self.total_bytes}

    # ---------------------------------------------------------- hot path

    def predict_normalized(self, hankel_input, sza_scaled: float, kt_scaled: float) -> float:
        w = self.weights
        np.copyto(self.x_in, hankel_input, casting="same_kind")
        np.isfinite(self.x_in, out=self.finite)
        np.logical_and.reduce(self.finite, axis=None, out=self.all_finite)
        if not self.all_finite or not (math.isfinite(sza_scaled) and math.isfinite(kt_scaled)):
            raise EdgeError("non-finite input")

        # conv1d (same padding) via im2col, then ReLU
        for dst, src in self.col_taps:
            np.copyto(dst, src)
        np.matmul(self.cols, self.Kr, out=self.conv)
        np.add(self.conv, w["conv.bias"], out=self.conv)
        np.maximum(self.conv, self.zero, out=self.conv)

        # diagonal SSM scan
        np.matmul(self.conv, self.BT, out=self.bx)
        np.multiply(self.bx, self.b_scale, out=self.v)
        self.h.fill(0)
        for v_t, hs_t in zip(self.v_rows, self.hs_rows):
            np.multiply(self.a_bar, self.h, out=self.h)
            np.add(self.h, v_t, out=self.h)
            np.copyto(hs_t, self.h)
        np.matmul(self.hs, self.CT, out=self.y)
        np.multiply(w["ssm.D"], self.conv, out=self.skip)
        np.add(self.y, self.skip, out=self.y)

        # layer norm over channels
        # sum then divide is exactly what ndarray.mean does
        np.add.reduce(self.y, axis=-1, keepdims=True, out=self.mean)
        np.divide(self.mean, self.n_channels, out=self.mean)
        np.subtract(self.y, self.mean, out=self.xc)
        np.multiply(self.xc, self.xc, out=self.sq)
        np.add.reduce(self.sq, axis=-1, keepdims=True, out=self.var)
        np.divide(self.var, self.n_channels, out=self.var)
        np.add(self.var, self.eps, out=self.var)
        np.sqrt(self.var, out=self.var)
        np.divide(self.one, self.var, out=self.inv)
        np.multiply(self.xc, self.inv, out=self.ln)
        np.multiply(self.ln, w["ln.gain"], out=self.ln)
        np.add(self.ln, w["ln.bias"], out=self.ln)

        # physics gate on the last timestep
        self.gate_in[0, 0, 0] = sza_scaled
        self.gate_in[1, 0, 0] = kt_scaled
        for s, W_g, b_g, z, e, den, pos, g, mask in self.gate_params:
            np.matmul(s, W_g, out=z)
            np.add(z, b_g, out=z)
            np.abs(z, out=e)
            np.negative(e, out=e)
            np.exp(e, out=e)
            np.add(self.one, e, out=den)
            np.divide(self.one, den, out=pos)
            np.divide(e, den, out=g)
            np.greater_equal(z, self.zero, out=mask)
            np.copyto(g, pos, where=mask)
        np.multiply(self.last, self.g[0], out=self.gated)
        np.multiply(self.gated, self.g[1], out=self.gated)

        # dense head and terminal ReLU
        np.matmul(self.gated, w["fc.weight"], out=self.fc)
        np.add(self.fc, w["fc.bias"], out=self.fc)
        np.maximum(self.fc, self.zero, out=self.fc)
        np.matmul(self.fc, w["out.weight"], out=self.out)
        np.add(self.out, w["out.bias"], out=self.out)
        np.maximum(self.out, self.zero, out=self.out)
        return float(self.out[0, 0])

    def predict_step(self, hankel_input, sza_scaled: float, kt_scaled: float, solar_next: SolarState | bool) -> float:
        """Forecast in W/m2; exactly zero when the target hour is night."""
        y = self.predict_normalized(hankel_input, sza_scaled, kt_scaled)
        night = solar_next if isinstance(solar_next, bool) else solar_next.is_night
        if night:
            return 0.0
        return max(y * (self.target_max - self.target_min) + self.target_min, 0.0)


def load(blob: bytes) -> InferenceArena:
    return InferenceArena(blob)


def count_allocations(fn, repeats: int = 10) -> int:
    """Numpy data allocations made by ``repeats`` warm calls of ``fn``."""
    fn()
    with counting_allocations() as counter:
        for _ in range(repeats):
            fn()
    return counter.allocations


def bench(arena: InferenceArena, n_iters: int = 1000, seed: int = 0) -> dict:
    """Latency statistics (milliseconds) and steady-state allocation count."""
    cfg = arena.config
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(cfg.rows, cfg.width)).astype(np.float32)
    sza, kt = 0.3, 0.8

    def step():
        arena.predict_step(x, sza, kt, False)

    for _ in range(20):
        step()
    times = np.empty(n_iters)
    for i in range(n_iters):
        t0 = time.perf_counter_ns()
        step()
        times[i] = (time.perf_counter_ns() - t0) / 1e6
    allocations = count_allocations(step, repeats=50)
    return {
        "n_iters": n_iters,
        "p50_ms": float(np.percentile(times, 50)),
        "p95_ms": float(np.percentile(times, 95)),
        "mean_ms": float(times.mean()),
        "allocations": int(allocations),
        **arena.memory_report(),
    }
