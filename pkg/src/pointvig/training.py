"""Adam, the cosine-restart schedule, metrics, and the training loops."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, IncompleteBackwardError, NumericError
from .nn import ParamStore


# -- optimizer ---------------------------------------------------------------


class AdamState:
    """First/second-moment buffers per parameter plus the shared step count."""

    def __init__(self, store: ParamStore):
        self.m = {path: np.zeros_like(t.data) for path, t in store.items()}
        self.v = {path: np.zeros_like(t.data) for path, t in store.items()}
        self.t = 0


def adam_step(store: ParamStore, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One Adam update over every parameter in the store.

    Every parameter must have received a gradient since the last
    ``zero_grad``; a missing gradient means the backward pass did not reach
    that parameter and is reported rather than silently skipped.
    """
    state.t += 1
    t = state.t
    for path, p in store.items():
        if p.grad is None:
            raise IncompleteBackwardError(
                f"adam_step: parameter {path!r} has no gradient"
            )
        g = p.grad
        if not np.isfinite(g).all():
            raise NumericError(f"adam_step: non-finite gradient for {path!r}")
        m = state.m[path]
        v = state.v[path]
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * (g * g)
        mhat = m / (1 - beta1 ** t)
        vhat = v / (1 - beta2 ** t)
        p.data = p.data - lr * mhat / (np.sqrt(vhat) + eps)


def lr_at(epoch: int, lr_max: float = 1e-3, lr_min: float = 1e-5,
          period: int = 25) -> float:
    """Cosine annealing with warm restarts, stepped per epoch."""
    if period < 1:
        raise ConfigError(f"lr_at: period must be >= 1, got {period}")
    phase = (epoch % period) / period
    return float(lr_min + 0.5 * (lr_max - lr_min) * (1.0 + np.cos(np.pi * phase)))


# -- augmentation ------------------------------------------------------------


def augment_scale(cloud, rng: np.random.Generator, lo: float = 0.7,
                  hi: float = 1.0 / 0.7):
    """Isotropic random rescale of the positions; attributes untouched."""
    from .cloud import PointCloud

    s = rng.uniform(lo, hi)
    return PointCloud(pos=cloud.pos * np.float32(s), attrs=cloud.attrs,
                      labels=cloud.labels)


# -- metrics -----------------------------------------------------------------


def confusion_matrix(pred, true, num_classes: int) -> np.ndarray:
    pred = np.asarray(pred, dtype=np.int64).ravel()
    true = np.asarray(true, dtype=np.int64).ravel()
    if pred.shape != true.shape:
        raise ConfigError(f"confusion_matrix: {pred.shape} vs {true.shape}")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (true, pred), 1)
    return cm


def overall_accuracy(cm: np.ndarray) -> float:
    return float(np.trace(cm) / max(cm.sum(), 1))


def mean_class_accuracy(cm: np.ndarray) -> float:
    """Mean per-class recall over classes present in the reference labels."""
    support = cm.sum(axis=1)
    present = support > 0
    if not present.any():
        return 0.0
    recall = np.diag(cm)[present] / support[present]
    return float(recall.mean())


def mean_iou(cm: np.ndarray) -> float:
    """Mean intersection-over-union; classes absent from both prediction and
    reference are excluded from the mean."""
    inter = np.diag(cm).astype(np.float64)
    union = cm.sum(axis=0) + cm.sum(axis=1) - np.diag(cm)
    present = union > 0
    if not present.any():
        return 0.0
    return float((inter[present] / union[present]).mean())


# -- loops -------------------------------------------------------------------


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 32
    lr_max: float = 1e-3
    lr_min: float = 1e-5
    restart_period: int = 25
    seed: int = 0
    scale_lo: float = 0.7
    scale_hi: float = 1.0 / 0.7
    augment: bool = True
    target_metric: str | None = None   # e.g. "OA" or "mIoU"; early-stops the loop
    target_value: float = 0.0
    log_path: str | None = None        # per-epoch CSV
    time_budget_s: float | None = None  # stop (gracefully) when exceeded

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if self.target_metric not in (None, "OA", "mAcc", "mIoU"):
            raise ConfigError(f"unknown target metric {self.target_metric!r}")


def _batches(order, batch_size):
    for lo in range(0, len(order), batch_size):
        yield order[lo:lo + batch_size]


def _labels_of(clouds, per_point: bool):
    if per_point:
        return np.concatenate([c.labels for c in clouds])
    return np.array([int(c.labels) for c in clouds], dtype=np.int64)


def evaluate(model, clouds, num_classes: int, batch_size: int = 32,
             per_point: bool = False) -> dict:
    """Eval-mode metrics over a dataset; returns OA/mAcc/mIoU and the raw
    confusion matrix."""
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    for lo in range(0, len(clouds), batch_size):
        batch = clouds[lo:lo + batch_size]
        logits = model.forward(batch, mode="eval")
        pred = logits.data.argmax(axis=1)
        cm += confusion_matrix(pred, _labels_of(batch, per_point), num_classes)
    return {
        "OA": overall_accuracy(cm),
        "mAcc": mean_class_accuracy(cm),
        "mIoU": mean_iou(cm),
        "confusion": cm,
    }


def train(model, train_clouds, test_clouds, cfg: TrainConfig) -> list[dict]:
    """Generic loop for both tasks; per-point labels when the model is a
    segmenter. Returns one history row per completed epoch.

    The loop is deterministic given the config seed: shuffling and
    augmentation derive from one generator, and all numeric work is
    single-threaded with respect to ordering.
    """
    per_point = model.spec.is_segmentation
    num_classes = model.spec.num_classes
    opt = AdamState(model.store)
    rng = np.random.default_rng(cfg.seed)
    history = []
    writer = None
    fh = None
    t_start = time.perf_counter()
    if cfg.log_path is not None:
        fh = open(cfg.log_path, "w", newline="")
        writer = csv.writer(fh)
        writer.writerow(["epoch", "lr", "train_loss", "OA", "mAcc", "mIoU"])
    try:
        for epoch in range(cfg.epochs):
            lr = lr_at(epoch, cfg.lr_max, cfg.lr_min, cfg.restart_period)
            order = rng.permutation(len(train_clouds))
            losses = []
            for batch_ids in _batches(order, cfg.batch_size):
                batch = [train_clouds[i] for i in batch_ids]
                if cfg.augment:
                    batch = [augment_scale(c, rng, cfg.scale_lo, cfg.scale_hi)
                             for c in batch]
                logits = model.forward(batch, mode="train")
                loss = T.cross_entropy(logits, _labels_of(batch, per_point))
                if not np.isfinite(loss.data):
                    raise NumericError(
                        f"training diverged: non-finite loss at epoch {epoch}"
                    )
                model.store.zero_grad()
                loss.backward()
                adam_step(model.store, opt, lr)
                losses.append(loss.item())
            metrics = evaluate(model, test_clouds, num_classes,
                               batch_size=cfg.batch_size, per_point=per_point)
            row = {
                "epoch": epoch,
                "lr": lr,
                "train_loss": float(np.mean(losses)),
                "OA": metrics["OA"],
                "mAcc": metrics["mAcc"],
                "mIoU": metrics["mIoU"],
            }
            history.append(row)
            if writer is not None:
                writer.writerow([row["epoch"], f"{row['lr']:.8f}",
                                 f"{row['train_loss']:.6f}", f"{row['OA']:.6f}",
                                 f"{row['mAcc']:.6f}", f"{row['mIoU']:.6f}"])
                fh.flush()
            if cfg.target_metric is not None and \
                    row[cfg.target_metric] >= cfg.target_value:
                break
            if cfg.time_budget_s is not None and \
                    time.perf_counter() - t_start > cfg.time_budget_s:
                break
    finally:
        if fh is not None:
            fh.close()
    return history
