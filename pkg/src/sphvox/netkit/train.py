"""Adam training loop, evaluation under rotations, and part-segmentation metrics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import geometry
from ..geometry import apply_rotation, make_rng
from . import tape as T
from .data import CATEGORY_PARTS, SyntheticDataset
from .model import Model, forward_batch, loss_and_grads, param_vars


class TrainingDiverged(RuntimeError):
    """Raised when the loss stops being finite."""


@dataclass(frozen=True)
class OptimizerParams:
    lr: float = 0.01
    decay: float = 0.5
    decay_every: int | None = 5
    batch_size: int = 4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def lr_at(self, epoch: int) -> float:
        if not self.decay_every:
            return self.lr
        return self.lr * self.decay ** (epoch // self.decay_every)


@dataclass
class Adam:
    params: OptimizerParams
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0

    def step(self, model: Model, grads: dict, lr: float) -> None:
        p = self.params
        self.t += 1
        c1 = 1.0 - p.beta1**self.t
        c2 = 1.0 - p.beta2**self.t
        for name in sorted(grads):
            g = grads[name]
            m = self.m.get(name, 0.0) * p.beta1 + (1.0 - p.beta1) * g
            v = self.v.get(name, 0.0) * p.beta2 + (1.0 - p.beta2) * g * g
            self.m[name], self.v[name] = m, v
            # masked filter entries have zero gradient, so they stay zero
            model.params[name] = model.params[name] - lr * (m / c1) / (np.sqrt(v / c2) + p.eps)


@dataclass(frozen=True)
class EpochLog:
    epoch: int
    loss: float
    accuracy: float
    lr: float
    miou: float | None = None


def targets_for(model: Model, dataset: SyntheticDataset, idx) -> np.ndarray:
    if model.config.head == "classification":
        return dataset.classes[idx]
    return np.stack([dataset.clouds[i].labels for i in idx])


def _batch_accuracy(logits: np.ndarray, targets: np.ndarray) -> float:
    return float(np.mean(logits.argmax(axis=-1) == targets))


def train(model: Model, dataset: SyntheticDataset, epochs: int,
          opt: OptimizerParams = OptimizerParams(), callback=None) -> tuple[Model, list[EpochLog]]:
    """Mini-batch Adam on cross-entropy over canonically posed clouds.

    No rotation is ever sampled here. Returns the updated model (the input
    is left untouched) and one log entry per epoch.
    """
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    model = model.copy()
    rng = make_rng(opt.seed)
    adam = Adam(opt)
    log = []
    for epoch in range(epochs):
        lr = opt.lr_at(epoch)
        order = rng.permutation(len(dataset))
        losses, correct, count, ious = [], 0.0, 0, []
        for start in range(0, len(order), opt.batch_size):
            idx = order[start : start + opt.batch_size]
            clouds = [dataset.clouds[i] for i in idx]
            targets = targets_for(model, dataset, idx)
            loss, grads, logits = loss_and_grads(model, clouds, targets)
            if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}, batch starting {start}")
            adam.step(model, grads, lr)
            losses.append(loss * len(idx))
            correct += _batch_accuracy(logits, targets) * len(idx)
            count += len(idx)
            if model.config.head == "segmentation":
                for lg, t, c in zip(logits, targets, dataset.classes[idx]):
                    parts = CATEGORY_PARTS[int(c)]
                    ious.append(part_iou(restricted_argmax(lg, parts), t, parts))
        miou_epoch = float(np.mean(ious)) if ious else None
        entry = EpochLog(epoch, float(np.sum(losses) / count), correct / count, lr, miou_epoch)
        log.append(entry)
        if callback is not None:
            callback(entry)
    return model, log


# ---------------------------------------------------------------------------
# evaluation


def part_iou(pred: np.ndarray, truth: np.ndarray, parts) -> float:
    """Mean IoU over a category's parts; a part absent from both sides scores 1."""
    scores = []
    for p in parts:
        inter = np.sum((pred == p) & (truth == p))
        union = np.sum((pred == p) | (truth == p))
        scores.append(1.0 if union == 0 else inter / union)
    return float(np.mean(scores))


def restricted_argmax(logits: np.ndarray, parts) -> np.ndarray:
    parts = np.asarray(parts)
    return parts[np.argmax(logits[:, parts], axis=1)]


def miou(preds, truths, categories) -> tuple[float, float]:
    """(average over instances, average over categories) of per-shape part IoU."""
    ious = np.array([part_iou(p, t, CATEGORY_PARTS[int(c)]) for p, t, c in zip(preds, truths, categories)])
    categories = np.asarray(categories)
    per_cat = [ious[categories == c].mean() for c in np.unique(categories)]
    return float(ious.mean()), float(np.mean(per_cat))


@dataclass(frozen=True)
class EvalResult:
    accuracy: float
    per_class_accuracy: dict
    miou_instance: float | None = None
    miou_category: float | None = None


def predict_logits(model: Model, clouds, batch_size: int = 8) -> list[np.ndarray]:
    out = []
    pv = param_vars(model, trainable=False)
    for start in range(0, len(clouds), batch_size):
        out.extend(forward_batch(T.Tape(), model, clouds[start : start + batch_size], pv).value)
    return out


def rotated_clouds(dataset: SyntheticDataset, rotation_mode: str, seed: int):
    if rotation_mode == "none":
        return list(dataset.clouds)
    if rotation_mode != "haar":
        raise ValueError("rotation_mode must be 'none' or 'haar'")
    rng = make_rng(seed)
    return [apply_rotation(geometry.haar_random_rotation(rng), c) for c in dataset.clouds]


def evaluate(model: Model, dataset: SyntheticDataset, rotation_mode: str = "none", seed: int = 0) -> EvalResult:
    """Accuracy (per shape or per point) and, for segmentation, both mIoU averages.

    ``rotation_mode="haar"`` draws a fresh uniform rotation for every sample.
    """
    clouds = rotated_clouds(dataset, rotation_mode, seed)
    logits = predict_logits(model, clouds)
    classes = dataset.classes
    if model.config.head == "classification":
        hits = np.array([lg.argmax() == c for lg, c in zip(logits, classes)])
        per_class = {int(c): float(hits[classes == c].mean()) for c in np.unique(classes)}
        return EvalResult(float(hits.mean()), per_class)
    preds = [restricted_argmax(lg, CATEGORY_PARTS[int(c)]) for lg, c in zip(logits, classes)]
    truths = [c.labels for c in dataset.clouds]
    point_hits = [np.mean(p == t) for p, t in zip(preds, truths)]
    per_class = {int(c): float(np.mean([h for h, k in zip(point_hits, classes) if k == c])) for c in np.unique(classes)}
    acc = float(np.sum([np.sum(p == t) for p, t in zip(preds, truths)]) / np.sum([len(t) for t in truths]))
    inst, cat = miou(preds, truths, classes)
    return EvalResult(acc, per_class, inst, cat)
