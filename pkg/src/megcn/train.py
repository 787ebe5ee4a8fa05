"""Learning-rate schedule, Nesterov SGD and the training / evaluation loops."""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .autodiff import Param, backward, softmax_cross_entropy
from .config import RunConfig, TrainConfig
from .data import SkeletonSequence, preprocess
from .model import MeGCN, save_checkpoint

log = logging.getLogger(__name__)

METRICS_HEADER = ("epoch", "lr", "train_loss", "train_acc", "val_acc")


class NonFiniteLossError(FloatingPointError):
    pass


@dataclass(frozen=True)
class Schedule:
    base_lr: float = 0.01
    warmup_epochs: int = 5
    milestones: tuple[int, ...] = (35, 55)
    decay: float = 0.1
    total_epochs: int = 65

    @classmethod
    def from_config(cls, cfg: TrainConfig) -> "Schedule":
        return cls(cfg.base_lr, cfg.warmup_epochs, tuple(cfg.milestones), cfg.lr_decay, cfg.epochs)


def lr_at_epoch(epoch: int, s: Schedule = Schedule()) -> float:
    """Linear warmup to ``base_lr`` then step decay at each milestone (zero-based epochs)."""
    if epoch < s.warmup_epochs:
        return s.base_lr * (epoch + 1) / s.warmup_epochs
    lr = s.base_lr
    for m in s.milestones:
        if epoch >= m:
            lr *= s.decay
    return lr


class SGD:
    """Nesterov momentum SGD with L2 decay folded into the gradient of non-exempt params."""

    def __init__(self, params: list[Param], momentum: float = 0.9, weight_decay: float = 0.0004,
                 nesterov: bool = True):
        self.params = list(params)
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.nesterov = nesterov
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def step(self, lr: float):
        mu = self.momentum
        for p, v in zip(self.params, self.velocity):
            g = p.grad
            if self.weight_decay and p.decay:
                g = g + self.weight_decay * p.data
            v *= mu
            v += g
            update = g + mu * v if self.nesterov else v
            p.data = p.data - lr * update

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()


def sgd_step(params: list[Param], opt: SGD, lr: float):
    opt.params = list(params)
    opt.step(lr)


def stack_samples(samples: list[SkeletonSequence], cfg: TrainConfig) -> tuple[np.ndarray, np.ndarray]:
    xs = [preprocess(s, cfg.frames, cfg.center, cfg.ref_joint).data for s in samples]
    return np.stack(xs), np.array([s.label for s in samples], dtype=np.int64)


def stratified_split(labels: np.ndarray, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng([seed, 0x5717])
    train_idx, val_idx = [], []
    for c in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == c))
        n_val = int(round(fraction * len(idx)))
        val_idx.extend(idx[:n_val])
        train_idx.extend(idx[n_val:])
    return np.sort(np.array(train_idx, dtype=int)), np.sort(np.array(val_idx, dtype=int))


def accuracy(model: MeGCN, x: np.ndarray, y: np.ndarray) -> float:
    if len(x) == 0:
        return float("nan")
    return float((model.predict(x).argmax(axis=1) == y).mean())


def confusion_matrix(model: MeGCN, x: np.ndarray, y: np.ndarray, num_classes: int) -> np.ndarray:
    pred = model.predict(x).argmax(axis=1)
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (y, pred), 1)
    return cm


def format_metrics(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRICS_HEADER)
    for r in rows:
        w.writerow([r["epoch"], *(repr(float(r[k])) for k in METRICS_HEADER[1:])])
    return buf.getvalue()


def parse_metrics(text: str) -> list[dict]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if tuple(header) != METRICS_HEADER:
        raise ValueError(f"unexpected metrics header {header}")
    return [{"epoch": int(r[0]), **{k: float(v) for k, v in zip(METRICS_HEADER[1:], r[1:])}} for r in reader]


def train(model: MeGCN, train_x: np.ndarray, train_y: np.ndarray, val_x: np.ndarray, val_y: np.ndarray,
          cfg: TrainConfig, out_dir=None, run: RunConfig | None = None,
          stop_when: Callable[[dict], bool] | None = None, progress=None) -> list[dict]:
    """Minibatch training; returns one metrics row per epoch.

    With ``out_dir`` the metrics CSV, ``best.ckpt`` (highest val accuracy) and
    ``last.ckpt`` are written there. ``stop_when`` is called with each epoch's
    row and ends the run early when it returns true.
    """
    if len(train_x) == 0:
        raise ValueError("empty training set")
    shuffle_rng = np.random.default_rng([cfg.seed, 1])
    dropout_rng = np.random.default_rng([cfg.seed, 2])
    schedule = Schedule.from_config(cfg)
    opt = SGD(model.params(), cfg.momentum, cfg.weight_decay, cfg.nesterov)
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    run = run or RunConfig(model=model.config, train=cfg)
    rows, best = [], -1.0
    for epoch in range(cfg.epochs):
        lr = lr_at_epoch(epoch, schedule)
        order = shuffle_rng.permutation(len(train_x))
        losses = []
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            opt.zero_grad()
            logits = model.forward(train_x[idx], training=True, rng=dropout_rng)
            loss = softmax_cross_entropy(logits, train_y[idx])
            value = float(loss.data)
            if not np.isfinite(value):
                raise NonFiniteLossError(f"non-finite loss {value} at epoch {epoch}, batch starting {start}")
            backward(loss)
            opt.step(lr)
            losses.append(value * len(idx))
        row = {
            "epoch": epoch,
            "lr": lr,
            "train_loss": sum(losses) / len(train_x),
            "train_acc": accuracy(model, train_x, train_y),
            "val_acc": accuracy(model, val_x, val_y) if len(val_x) else float("nan"),
        }
        rows.append(row)
        log.info("epoch %d lr %.5f loss %.4f train %.3f val %.3f", epoch, lr, row["train_loss"],
                 row["train_acc"], row["val_acc"])
        if progress is not None:
            progress(row)
        if out_dir is not None:
            score = row["val_acc"] if len(val_x) else row["train_acc"]
            if score > best:
                best = score
                save_checkpoint(model, out_dir / "best.ckpt", run)
            save_checkpoint(model, out_dir / "last.ckpt", run)
            (out_dir / "metrics.csv").write_text(format_metrics(rows))
        if stop_when is not None and stop_when(row):
            break
    return rows
