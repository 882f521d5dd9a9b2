"""Overlapping-subwindow (Hankel) embedding of a multivariate window.

Row ``i`` of the embedding concatenates the feature vectors at timesteps
``i .. i+k-1``. Layout is time-major: each timestep contributes a contiguous
block of ``F`` features, oldest first. Serialized models depend on this order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class HankelSpec:
    window: int = 24
    subwindow: int = 5
    features: int = 15
    stride: int = 1

    def __post_init__(self):
        if self.stride != 1:
            raise ValueError("only stride 1 is supported")
        if not 1 <= self.subwindow <= self.window:
            raise ValueError(f"subwindow {self.subwindow} must lie in 1..{self.window}")

    @property
    def rows(self) -> int:
        return row_count(self.window, self.subwindow)

    @property
    def width(self) -> int:
        return self.subwindow * self.features


def row_count(n: int, k: int) -> int:
    """Number of overlapping subwindows of length ``k`` in a length-``n`` window."""
    if k < 1 or k > n:
        raise ValueError(f"subwindow {k} must lie in 1..{n}")
    return n - k + 1


def unroll(x: np.ndarray, spec: HankelSpec | None = None) -> np.ndarray:
    """Embed ``x`` of shape ``(..., n, F)`` into ``(..., m, k*F)``.

    Leading batch dimensions are carried through. The result is a fresh
    contiguous array (not a strided view).
    """
    x = np.asarray(x)
    if spec is None:
        spec = HankelSpec(window=x.shape[-2], features=x.shape[-1], subwindow=min(5, x.shape[-2]))
    if x.ndim < 2 or x.shape[-2] != spec.window or x.shape[-1] != spec.features:
        raise ValueError(f"expected trailing shape ({spec.window}, {spec.features}), got {x.shape}")
    k, m = spec.subwindow, spec.rows
    # windows[..., i, f, j] = x[..., i + j, f]
    windows = np.lib.stride_tricks.sliding_window_view(x, k, axis=-2)
    # -> (..., m, k, F) then flatten time-major
    out = np.swapaxes(windows, -1, -2).reshape(*x.shape[:-2], m, k * spec.features)
    return np.ascontiguousarray(out)
