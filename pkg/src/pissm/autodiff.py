"""A small reverse-mode autodiff engine for the fixed PISSM graph.

Only the ops and shapes the network needs are provided; anything else fails
loudly instead of broadcasting silently. Tensors wrap numpy arrays and keep
their dtype, so the same graph runs in float32 for training and float64 for
gradient checks.

Every op records its parents and a closure that pushes the output gradient
back to them. Node ids come from a global counter, so sorting reachable nodes
by id gives a topological order and backward is deterministic.
"""

from __future__ import annotations

import itertools
from typing import Callable, Iterable, Sequence

import numpy as np

_ids = itertools.count()


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "_id")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        self.data = np.asarray(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self._id = next(_ids)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, name={self.name!r})"

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g: np.ndarray):
        if g.shape != self.data.shape:
            raise ValueError(f"gradient shape {g.shape} does not match {self.data.shape}")
        if self.grad is None:
            self.grad = g.astype(self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self):
        Tape.from_root(self).backward()


def _result(data, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


class Tape:
    """Recorded operations reachable from a root, in creation order."""

    def __init__(self, nodes: list[Tensor]):
        self.nodes = nodes

    @classmethod
    def from_root(cls, root: Tensor) -> "Tape":
        seen: dict[int, Tensor] = {}
        stack = [root]
        while stack:
            node = stack.pop()
            if node._id in seen or not node.requires_grad:
                continue
            seen[node._id] = node
            stack.extend(node._parents)
        return cls([seen[k] for k in sorted(seen)])

    def backward(self):
        root = self.nodes[-1]
        if root.data.size != 1:
            raise ValueError("backward needs a scalar root")
        # interior gradients are scratch; only leaves keep theirs
        grads: dict[int, np.ndarray] = {root._id: np.ones_like(root.data)}
        for node in reversed(self.nodes):
            g = grads.pop(node._id, None)
            if g is None:
                continue
            if node._backward is None:
                node._accumulate(g)
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if parent._id in grads:
                    grads[parent._id] = grads[parent._id] + pg
                else:
                    grads[parent._id] = pg


# --------------------------------------------------------------------- ops


def linear(x: Tensor, W: Tensor, b: Tensor) -> Tensor:
    """``x @ W + b`` over the last axis of ``x``."""
    *lead, i = x.shape
    if W.data.ndim != 2 or W.shape[0] != i or b.shape != (W.shape[1],):
        raise ValueError(f"linear shape mismatch: x {x.shape}, W {W.shape}, b {b.shape}")
    x2 = x.data.reshape(-1, i)
    out = (x2 @ W.data + b.data).reshape(*lead, W.shape[1])

    def backward(g):
        g2 = g.reshape(-1, W.shape[1])
        return (
            (g2 @ W.data.T).reshape(x.shape),
            x2.T @ g2,
            g2.sum(axis=0),
        )

    return _result(out, (x, W, b), backward)


def _im2col(x: np.ndarray, width: int) -> np.ndarray:
    """Zero-pad the time axis and gather ``width`` taps: (..., T, C) -> (..., T, width*C)."""
    pad = width // 2
    cfg = [(0, 0)] * (x.ndim - 2) + [(pad, pad), (0, 0)]
    xp = np.pad(x, cfg)
    t = x.shape[-2]
    return np.concatenate([xp[..., j : j + t, :] for j in range(width)], axis=-1)


def conv1d_same(x: Tensor, K: Tensor, b: Tensor) -> Tensor:
    """Cross-correlation along time with a width-3 kernel and one zero pad per side.

    ``x`` is ``(..., T, C_in)``, ``K`` is ``(3, C_in, C_out)``; output is ``(..., T, C_out)``.
    """
    width, c_in, c_out = K.shape
    if width != 3 or x.shape[-1] != c_in or b.shape != (c_out,):
        raise ValueError(f"conv1d shape mismatch: x {x.shape}, K {K.shape}, b {b.shape}")
    t = x.shape[-2]
    cols = _im2col(x.data, width).reshape(-1, width * c_in)
    Kr = K.data.reshape(width * c_in, c_out)
    out = (cols @ Kr + b.data).reshape(*x.shape[:-1], c_out)

    def backward(g):
        g2 = g.reshape(-1, c_out)
        dcols = (g2 @ Kr.T).reshape(*x.shape[:-2], t, width, c_in)
        dx = np.zeros_like(x.data)
        for j in range(width):
            # tap j reads x[s + j - 1]
            lo, hi = max(0, 1 - j), min(t, t + 1 - j)
            dx[..., lo + j - 1 : hi + j - 1, :] += dcols[..., lo:hi, j, :]
        return dx, (cols.T @ g2).reshape(K.shape), g2.sum(axis=0)

    return _result(out, (x, K, b), backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = np.where(mask, x.data, np.zeros((), x.dtype))
    return _result(out, (x,), lambda g: (g * mask,))


def stable_sigmoid(z: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1 / (1 + e), e / (1 + e))


def sigmoid(x: Tensor) -> Tensor:
    s = stable_sigmoid(x.data)
    return _result(s, (x,), lambda g: (g * s * (1 - s),))


def dropout(x: Tensor, rate: float = 0.2, training: bool = False, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout; identity in eval mode or when ``rate`` is 0."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("training-mode dropout needs a seeded generator")
    keep = rng.random(x.shape) >= rate
    scale = np.asarray(1.0 / (1.0 - rate), dtype=x.dtype)
    mask = keep * scale
    return _result(x.data * mask, (x,), lambda g: (g * mask,))


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale by ``gain`` and shift by ``bias``."""
    h = x.shape[-1]
    if gain.shape != (h,) or bias.shape != (h,):
        raise ValueError(f"layer_norm shape mismatch: x {x.shape}, gain {gain.shape}")
    mean = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mean
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1 / np.sqrt(var + np.asarray(eps, x.dtype))
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def backward(g):
        lead = tuple(range(g.ndim - 1))
        dxhat = g * gain.data
        dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True) - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _result(out, (x, gain, bias), backward)


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product of equal-shape tensors; ``b`` may also be a 0-d scalar."""
    if a.shape != b.shape and b.data.ndim != 0:
        raise ValueError(f"hadamard shape mismatch: {a.shape} vs {b.shape}")

    def backward(g):
        gb = g * a.data
        return g * b.data, gb if b.data.ndim else np.asarray(gb.sum(), dtype=b.dtype)

    return _result(a.data * b.data, (a, b), backward)


def last_step(x: Tensor) -> Tensor:
    """Select the final timestep: (N, T, H) -> (N, H)."""
    if x.data.ndim != 3:
        raise ValueError(f"last_step expects (N, T, H), got {x.shape}")

    def backward(g):
        dx = np.zeros_like(x.data)
        dx[:, -1, :] = g
        return (dx,)

    return _result(x.data[:, -1, :].copy(), (x,), backward)


def flatten_last(x: Tensor) -> Tensor:
    """Drop a trailing unit axis: (N, 1) -> (N,)."""
    if x.shape[-1] != 1:
        raise ValueError(f"flatten_last expects a trailing axis of 1, got {x.shape}")
    return _result(x.data[..., 0].copy(), (x,), lambda g: (g[..., None],))


def mse(pred: Tensor, target) -> Tensor:
    """Mean squared error against a constant target vector."""
    t = np.asarray(target, dtype=pred.dtype)
    if pred.shape != t.shape or pred.data.ndim != 1 or pred.shape[0] < 1:
        raise ValueError(f"mse shape mismatch: {pred.shape} vs {t.shape}")
    diff = pred.data - t
    n = diff.shape[0]
    out = np.asarray((diff * diff).sum() / n, dtype=pred.dtype)
    return _result(out, (pred,), lambda g: (g * 2 * diff / n,))


# ---------------------------------------------------------- verification


def grad_check(
    f: Callable[[], Tensor],
    params: Iterable[Tensor],
    h: float = 1e-5,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Compare tape gradients against central differences.

    ``f`` rebuilds the graph from the current parameter values on every call
    and must be deterministic (reseed any dropout inside it). Returns the max
    over probed coordinates of ``|g_a - g_n| / max(1, |g_a|, |g_n|)``.
    With ``max_coords`` set, that many coordinates are sampled across all
    parameters instead of probing every one.
    """
    params = list(params)
    for p in params:
        p.zero_grad()
    loss = f()
    if not np.all(np.isfinite(loss.data)):
        raise FloatingPointError("non-finite loss in grad_check")
    loss.backward()
    analytic = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]

    coords = [(pi, j) for pi, p in enumerate(params) for j in range(p.data.size)]
    if max_coords is not None and max_coords < len(coords):
        rng = rng or np.random.default_rng(0)
        pick = rng.choice(len(coords), size=max_coords, replace=False)
        coords = [coords[i] for i in sorted(pick)]

    worst = 0.0
    for pi, j in coords:
        flat = params[pi].data.reshape(-1)
        orig = flat[j]
        flat[j] = orig + h
        up = float(f().data)
        flat[j] = orig - h
        down = float(f().data)
        flat[j] = orig
        if not (np.isfinite(up) and np.isfinite(down)):
            raise FloatingPointError("non-finite loss in grad_check")
        gn = (up - down) / (2 * h)
        ga = float(analytic[pi].reshape(-1)[j])
        worst = max(worst, abs(ga - gn) / max(1.0, abs(ga), abs(gn)))
    return worst
