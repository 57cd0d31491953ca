"""Binary-classification training: BCE loss, Adam with L2, StepLR, best-checkpoint selection."""

from __future__ import annotations

import csv
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterator

import numpy as np

from .tensor import Tensor, as_tensor, no_grad

CLAMP = 1e-7


@dataclass
class TrainConfig:
    lr: float = 1e-4
    l2: float = 5e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_size: int = 100
    gamma: float = 0.65
    epochs: int = 200
    shuffle_period: int = 10
    batch_size: int = 32
    init: str = "default"
    seed: int = 0
    threshold: float = 0.5

    def __post_init__(self):
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in (0, 1)")
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if self.shuffle_period < 1 or self.step_size < 1 or self.batch_size < 1:
            raise ValueError("shuffle_period, step_size and batch_size must be >= 1")
        if self.init not in ("default", "xavier_normal"):
            raise ValueError(f"unknown init scheme {self.init!r}")

    def to_dict(self):
        return asdict(self)


# ---------------------------------------------------------------------------
# loss


def bce_loss(y, labels) -> Tensor:
    """Mean two-term binary cross entropy; ``y`` is clamped to [1e-7, 1 - 1e-7].

    The gradient is taken at the clamped value and passed straight through
    the clamp, so saturated wrong predictions still receive a signal.
    """
    y = as_tensor(y)
    t = np.asarray(labels, dtype=np.float64)
    if not np.all((t == 0) | (t == 1)):
        raise ValueError("labels must be 0 or 1")
    t = np.broadcast_to(t, y.shape)
    c = np.clip(y.data.astype(np.float64), CLAMP, 1 - CLAMP)
    n = max(c.size, 1)
    value = -np.sum(t * np.log(c) + (1 - t) * np.log1p(-c)) / n

    def backward(g):
        return ((g * (-(t / c) + (1 - t) / (1 - c)) / n).astype(y.dtype),)

    return Tensor.from_op(np.asarray(value, dtype=y.dtype), (y,), backward)


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class OptimizerState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


def adam_step(params: dict, state: OptimizerState, config: TrainConfig, lr: float | None = None):
    """One bias-corrected Adam update with L2 folded into the gradient (in place)."""
    lr = config.lr if lr is None else lr
    state.step += 1
    b1, b2 = config.beta1, config.beta2
    c1 = 1 - b1 ** state.step
    c2 = 1 - b2 ** state.step
    for name, p in params.items():
        if not p.trainable:
            continue
        g = p.grad
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in parameter {name!r}")
        if config.l2:
            g = g + config.l2 * p.data
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        p.data = p.data - (lr * (m / c1) / (np.sqrt(v / c2) + config.eps)).astype(p.dtype)
    return params, state


def steplr(base_lr: float, epoch: int, step_size: int, gamma: float) -> float:
    if step_size < 1:
        raise ValueError("step_size must be >= 1")
    return base_lr * gamma ** (epoch // step_size)


# ---------------------------------------------------------------------------
# initialization


def xavier_normal_init(model, seed):
    """Redraw every weight (ndim >= 2) from N(0, 2/(fan_in + fan_out)); zero every bias.

    Gains of normalization layers are left at one. For conv filters
    ``[n_c, k, k]`` the receptive field counts toward both fans.
    """
    rng = np.random.default_rng(seed)
    for name, p in model.named_parameters().items():
        leaf = name.rsplit(".", 1)[-1]
        if p.data.ndim >= 2:
            fan_in, fan_out = xavier_fans(p.data.shape)
            std = np.sqrt(2.0 / (fan_in + fan_out))
            p.data = rng.normal(0.0, std, size=p.data.shape).astype(p.dtype)
        elif "gain" not in leaf:
            p.data = np.zeros_like(p.data)
        p.zero_grad()
    return model


def xavier_fans(shape):
    if len(shape) == 2:
        return shape[1], shape[0]
    receptive = int(np.prod(shape[1:]))
    # single input channel: fan_in = k*k, fan_out = n_c*k*k
    return receptive, shape[0] * receptive


# ---------------------------------------------------------------------------
# fit


@dataclass
class MetricRecord:
    epoch: int
    lr: float
    train_loss: float
    val_accuracy: float
    val_loss: float
    val_confidence: float
    wall_time: float

    FIELDS = ("epoch", "lr", "train_loss", "val_accuracy", "val_loss", "val_confidence", "wall_time")


@dataclass
class Checkpoint:
    state: dict
    config: dict
    variant: str
    epoch: int
    val_accuracy: float
    val_loss: float = float("inf")
    history: list = field(default_factory=list)

    def improved_by(self, accuracy, loss) -> bool:
        return accuracy > self.val_accuracy or (accuracy == self.val_accuracy and loss < self.val_loss)


@dataclass
class FitResult:
    checkpoint: Checkpoint
    history: list[MetricRecord]


def write_metrics_csv(path, history):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(MetricRecord.FIELDS)
        for r in history:
            w.writerow([r.epoch, repr(r.lr), repr(r.train_loss), repr(r.val_accuracy),
                        repr(r.val_loss), repr(r.val_confidence), f"{r.wall_time:.3f}"])


def partition_seed(seed, block):
    return np.random.SeedSequence([int(seed), int(block)])


def training_partitions(dataset, config: TrainConfig) -> Iterator[tuple[int, np.ndarray, np.ndarray]]:
    """Yield ``(epoch, sets, labels)``; sets are redrawn every ``shuffle_period`` epochs."""
    X = y = None
    for epoch in range(config.epochs):
        if epoch % config.shuffle_period == 0:
            X, y, _ = dataset.sets("train", seed=partition_seed(config.seed, epoch // config.shuffle_period))
        yield epoch, X, y


def _batched_predict(model, X, batch_size):
    out = []
    with no_grad():
        for i in range(0, len(X), batch_size):
            out.append(np.asarray(model.forward(X[i:i + batch_size], train=False).data, dtype=np.float64))
    return np.concatenate(out)


def validation_seed(seed) -> np.random.SeedSequence:
    """Seed stream that partitions the validation split, shared with ``quan eval``."""
    return np.random.SeedSequence([int(seed), 2 ** 31])


def fit(dataset, model, config: TrainConfig, *, metrics_path=None,
        on_epoch: Callable[[MetricRecord], None] | None = None) -> FitResult:
    """Train ``model`` on ``dataset``'s train split and keep the best validation epoch.

    "Best" is the highest validation accuracy; ties go to the lower
    validation loss. At the end the model holds the best checkpoint's weights.
    """
    if config.init == "xavier_normal":
        xavier_normal_init(model, config.seed)
    Xv, yv, _ = dataset.sets("validation", seed=validation_seed(config.seed))
    if len(Xv) == 0:
        raise ValueError("validation split is empty")
    rng = np.random.default_rng(np.random.SeedSequence([int(config.seed), 2 ** 31 + 1]))
    params = model.named_parameters()
    opt = OptimizerState()
    history: list[MetricRecord] = []
    best: Checkpoint | None = None
    start = time.perf_counter()
    model.train()
    for epoch, X, y in training_partitions(dataset, config):
        if len(X) == 0:
            raise ValueError("train split is empty")
        lr = steplr(config.lr, epoch, config.step_size, config.gamma)
        order = rng.permutation(len(X))
        total = 0.0
        for i in range(0, len(X), config.batch_size):
            idx = np.sort(order[i:i + config.batch_size])
            model.zero_grad()
            loss = bce_loss(model.forward(X[idx], train=True, seed=rng), y[idx])
            if not np.isfinite(loss.data):
                raise FloatingPointError(f"loss diverged at epoch {epoch}")
            loss.backward()
            adam_step(params, opt, config, lr)
            total += float(loss.data) * len(idx)
            del loss
        model.eval()
        conf = _batched_predict(model, Xv, max(config.batch_size, 64))
        model.train()
        acc = float(np.mean((conf > config.threshold) == (yv == 1)))
        vloss = float(bce_loss(conf, yv).data)
        record = MetricRecord(epoch, lr, total / len(X), acc, vloss, float(conf.mean()),
                              time.perf_counter() - start)
        history.append(record)
        if on_epoch:
            on_epoch(record)
        if best is None or best.improved_by(acc, vloss):
            best = Checkpoint({k: np.array(v, copy=True) for k, v in model.state_dict().items()},
                              model.config.to_dict(), model.variant, epoch, acc, vloss)
    model.eval()
    best.history = [asdict(r) for r in history]
    model.load_state_dict(best.state)
    if metrics_path is not None:
        write_metrics_csv(metrics_path, history)
    return FitResult(best, history)

