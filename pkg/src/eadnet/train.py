"""Desk-scale training loop: Adam, poly learning rate, mean per-pixel cross-entropy."""
from __future__ import annotations

import csv
import logging
import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import functional as F
from .autograd import no_grad
from .metrics import ConfusionMatrix, accumulate, miou
from .netpbm import load_pgm_labels, load_ppm
from .network import Model
from .optim import AdamState, PolySchedule, adam_step, poly_lr
from .synth import LabeledSample

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    iters: int = 2000
    base_lr: float = 5e-4
    batch: int = 8
    seed: int = 42
    power: float = 0.9
    weight_decay: float = 0.0
    reduction: str = "mean"


@dataclass(frozen=True)
class LogRecord:
    iter: int
    lr: float
    loss: float


def _batches(samples, batch, rng):
    order = []
    while True:
        if len(order) < batch:
            order.extend(rng.permutation(len(samples)).tolist())
        idx, order = order[:batch], order[batch:]
        yield (np.concatenate([samples[i].image for i in idx]),
               np.stack([samples[i].labels for i in idx]))


def train(model: Model, samples: list[LabeledSample], config: TrainConfig = TrainConfig(),
          callback=None) -> list[LogRecord]:
    """Train ``model`` in place; returns one record per iteration.

    ``callback(record)`` is invoked after every step.
    """
    if not samples:
        raise TrainingError("empty dataset")
    if config.iters < 0:
        raise ValueError("iters must be non-negative")
    if config.iters == 0:
        return []
    schedule = PolySchedule(config.base_lr, config.iters, config.power)
    state = AdamState(base_lr=config.base_lr, weight_decay=config.weight_decay)
    rng = np.random.default_rng(config.seed)
    batches = _batches(samples, min(config.batch, len(samples)), rng)
    history = []
    for it in range(config.iters):
        lr = poly_lr(schedule, it)
        x, y = next(batches)
        model.store.zero_grad()
        loss = F.cross_entropy(model(x, training=True), y, reduction=config.reduction)
        value = float(loss.value)
        if not math.isfinite(value):
            raise TrainingError(f"non-finite loss {value} at iteration {it}")
        loss.backward()
        adam_step(model.store, state, lr)
        rec = LogRecord(it, lr, value)
        history.append(rec)
        if callback is not None:
            callback(rec)
        if it % 100 == 0:
            log.info("iter %d lr %.3g loss %.4f", it, lr, value)
    return history


def evaluate(model: Model, samples: list[LabeledSample], num_classes: int, batch: int = 16):
    """(mIoU, per-class IoU, confusion matrix) of inference-mode predictions."""
    cm = ConfusionMatrix(num_classes)
    with no_grad():
        for i in range(0, len(samples), batch):
            chunk = samples[i:i + batch]
            x = np.concatenate([s.image for s in chunk])
            pred = model(x).value.argmax(axis=1)
            accumulate(cm, pred, np.stack([s.labels for s in chunk]))
    m, per_class = miou(cm)
    return m, per_class, cm


def write_loss_log(records, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["iter", "lr", "loss"])
        for r in records:
            wr.writerow([r.iter, repr(r.lr), repr(r.loss)])


def read_loss_log(path: str | os.PathLike) -> list[LogRecord]:
    with open(path, encoding="utf-8", newline="") as f:
        return [LogRecord(int(r["iter"]), float(r["lr"]), float(r["loss"])) for r in csv.DictReader(f)]


def load_dataset_dir(path: str | os.PathLike) -> list[LabeledSample]:
    """Pairs ``<stem>.ppm`` / ``<stem>.pgm`` in ``path``, sorted by stem."""
    root = Path(path)
    samples = []
    for img in sorted(root.glob("*.ppm")):
        lab = img.with_suffix(".pgm")
        if not lab.exists():
            raise FileNotFoundError(f"no label map {lab.name} for {img.name}")
        samples.append(LabeledSample(load_ppm(img), load_pgm_labels(lab)))
    return samples
