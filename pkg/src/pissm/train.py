"""Training loop: MSE, Adam with decoupled weight decay, global-norm clipping,
plateau LR halving, early stopping and best-checkpoint tracking."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .features import NormStats, SampleSet
from .model import NO_DECAY, ModelConfig, ModelParams, forward, init_model, predict_normalized

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    def __init__(self, msg: str, checkpoint: ModelParams | None = None):
        super().__init__(msg)
        self.checkpoint = checkpoint


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 256
    lr: float = 1e-3
    plateau_factor: float = 0.5
    plateau_patience: int = 15
    plateau_threshold: float = 1e-4
    min_lr: float = 1e-6
    grad_clip_norm: float = 1.0
    weight_decay: float = 1e-5
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    early_stop_patience: int = 30
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.plateau_factor < 1:
            raise ValueError("plateau_factor must lie in (0, 1)")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("epochs and batch_size must be positive")
        for name in ("lr", "grad_clip_norm", "adam_eps", "plateau_patience", "early_stop_patience"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_rmse: list[float] = field(default_factory=list)
    lr: list[float] = field(default_factory=list)
    best_epoch: int = -1
    wall_time: float = 0.0
    max_clipped_norm: float = 0.0

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_loss", "val_loss", "val_rmse", "lr"])
            for e in range(len(self.train_loss)):
                w.writerow([e + 1, repr(self.train_loss[e]), repr(self.val_loss[e]), repr(self.val_rmse[e]), repr(self.lr[e])])

    @classmethod
    def read_csv(cls, path) -> "TrainHistory":
        h = cls()
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                h.train_loss.append(float(row["train_loss"]))
                h.val_loss.append(float(row["val_loss"]))
                h.val_rmse.append(float(row["val_rmse"]))
                h.lr.append(float(row["lr"]))
        if h.val_loss:
            h.best_epoch = int(np.argmin(h.val_loss))
        return h


class Adam:
    """Adam with bias correction and decoupled weight decay ``p -= lr*wd*p``."""

    def __init__(self, params: ModelParams, cfg: TrainConfig):
        self.cfg = cfg
        self.lr = cfg.lr
        self.t = 0
        self.m = {k: np.zeros_like(t.data) for k, t in params.items()}
        self.v = {k: np.zeros_like(t.data) for k, t in params.items()}

    def step(self, params: ModelParams, grads: dict[str, np.ndarray]) -> None:
        cfg = self.cfg
        for k, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise TrainingError(f"non-finite gradient in {k} at step {self.t + 1}")
        self.t += 1
        b1, b2 = cfg.adam_beta1, cfg.adam_beta2
        c1 = 1 - b1**self.t
        c2 = 1 - b2**self.t
        for k, p in params.items():
            g = grads[k]
            if cfg.weight_decay and k not in NO_DECAY:
                p.data -= p.data.dtype.type(self.lr * cfg.weight_decay) * p.data
            m = self.m[k]
            v = self.v[k]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p.data -= (self.lr * (m / c1) / (np.sqrt(v / c2) + cfg.adam_eps)).astype(p.data.dtype)


def adam_step(params: ModelParams, grads: dict[str, np.ndarray], state: Adam) -> ModelParams:
    state.step(params, grads)
    return params


def global_norm(grads: dict[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values())))


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float = 1.0) -> dict[str, np.ndarray]:
    """Scale all gradients jointly so their global L2 norm is at most ``max_norm``."""
    norm = global_norm(grads)
    if norm <= max_norm:
        return grads
    scale = max_norm / norm
    return {k: (g * scale).astype(g.dtype) for k, g in grads.items()}


class PlateauScheduler:
    """Halve the LR after ``patience`` epochs without a relative improvement."""

    def __init__(self, cfg: TrainConfig):
        self.factor = cfg.plateau_factor
        self.patience = cfg.plateau_patience
        self.threshold = cfg.plateau_threshold
        self.min_lr = cfg.min_lr
        self.best = np.inf
        self.bad_epochs = 0

    def step(self, val_loss: float, lr: float) -> float:
        if val_loss < self.best * (1 - self.threshold):
            self.best = val_loss
            self.bad_epochs = 0
            return lr
        self.bad_epochs += 1
        if self.bad_epochs >= self.patience:
            self.bad_epochs = 0
            return max(lr * self.factor, self.min_lr)
        return lr


def plateau_scheduler(val_losses: list[float], cfg: TrainConfig) -> float:
    """LR after replaying a validation-loss history from ``cfg.lr``."""
    sched = PlateauScheduler(cfg)
    lr = cfg.lr
    for v in val_losses:
        lr = sched.step(v, lr)
    return lr


def _batch_loss(params, X, gates, y, rng, training=True):
    return ad.mse(forward(X, gates, params, training=training, rng=rng), y)


def evaluate_loss(params: ModelParams, samples: SampleSet, batch_size: int = 1024) -> float:
    pred = predict_normalized(samples, params, batch_size).astype(np.float64)
    return float(np.mean((pred - samples.y) ** 2))


def train_steps(params: ModelParams, samples: SampleSet, steps: int, cfg: TrainConfig) -> list[float]:
    """Plain optimization on one fixed batch (used for capacity checks)."""
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(params, cfg)
    y = samples.y.astype(params.dtype)
    losses = []
    for _ in range(steps):
        params.zero_grad()
        loss = _batch_loss(params, samples.X, samples.gates, y, rng)
        loss.backward()
        grads = clip_global_norm({k: t.grad for k, t in params.items()}, cfg.grad_clip_norm)
        opt.step(params, grads)
        losses.append(float(loss.data))
    return losses


def train(
    train_set: SampleSet,
    val_set: SampleSet,
    model_config: ModelConfig,
    train_config: TrainConfig,
    stats: NormStats | None = None,
    params: ModelParams | None = None,
    checkpoint_path=None,
    progress=None,
) -> tuple[ModelParams, TrainHistory]:
    """Train and return the checkpoint with the lowest validation MSE.

    Validation RMSE in the history is in W/m2 when ``stats`` is given,
    otherwise in normalized units. ``checkpoint_path`` (optional) receives
    the best model file whenever it improves.
    """
    if len(train_set) == 0 or len(val_set) == 0:
        raise ValueError("train and validation sets must be non-empty")
    cfg = train_config
    params = params or init_model(model_config)
    opt = Adam(params, cfg)
    sched = PlateauScheduler(cfg)
    shuffle_rng = np.random.default_rng(cfg.seed)
    dropout_rng = np.random.default_rng(cfg.seed + 1)
    hist = TrainHistory()
    best = params.copy()
    best_val = np.inf
    since_best = 0
    y_all = train_set.y.astype(params.dtype)
    scale = (stats.target_max - stats.target_min) if stats is not None else 1.0
    t0 = time.perf_counter()

    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(len(train_set))
        total, count = 0.0, 0
        for start in range(0, len(order), cfg.batch_size):
            idx = np.sort(order[start : start + cfg.batch_size])
            params.zero_grad()
            loss = _batch_loss(params, train_set.X[idx], train_set.gates[idx], y_all[idx], dropout_rng)
            if not np.isfinite(loss.data):
                raise TrainingError(f"non-finite loss at epoch {epoch + 1}", best)
            loss.backward()
            raw = {k: t.grad for k, t in params.items()}
            if not all(np.all(np.isfinite(g)) for g in raw.values()):
                raise TrainingError(f"non-finite gradient at epoch {epoch + 1}", best)
            grads = clip_global_norm(raw, cfg.grad_clip_norm)
            clipped = global_norm(grads)
            assert clipped <= cfg.grad_clip_norm * (1 + 1e-5), clipped
            hist.max_clipped_norm = max(hist.max_clipped_norm, clipped)
            try:
                opt.step(params, grads)
            except TrainingError as exc:
                raise TrainingError(str(exc), best) from None
            total += float(loss.data) * len(idx)
            count += len(idx)

        val_loss = evaluate_loss(params, val_set)
        hist.train_loss.append(total / count)
        hist.val_loss.append(val_loss)
        hist.val_rmse.append(float(np.sqrt(val_loss)) * scale)
        hist.lr.append(opt.lr)
        if val_loss < best_val:
            best_val = val_loss
            best = params.copy()
            hist.best_epoch = epoch
            since_best = 0
            if checkpoint_path is not None:
                from .model import serialize

                Path(checkpoint_path).write_bytes(serialize(best, stats))
        else:
            since_best += 1
        if progress is not None:
            progress(epoch, hist)
        log.info("epoch %d train %.6f val %.6f lr %.2e", epoch + 1, hist.train_loss[-1], val_loss, opt.lr)
        opt.lr = sched.step(val_loss, opt.lr)
        if since_best >= cfg.early_stop_patience:
            log.info("early stop after %d epochs without improvement", since_best)
            break

    hist.wall_time = time.perf_counter() - t0
    return best, hist
