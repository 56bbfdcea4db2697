"""Training with adaptive denoising: per-sample loss tracking and high-loss exclusion.

Every epoch, each training sample's Dice loss is recorded. Before epoch t the
``schedule_n(t)`` samples with the highest loss at epoch t-1 are held out of
the gradient updates; they are still evaluated forward-only so their ranking
stays current and they can re-enter later.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, fields
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import ops
from .arch import RARUNet
from .metrics import confusion, overlap_metrics
from .optim import make_optimizer
from .tensor import Tensor, no_grad

logger = logging.getLogger(__name__)

_FLOOR_SLACK = 1e-9


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 8
    learning_rate: float = 1e-5
    alpha: Optional[float] = None
    beta: Optional[float] = None
    h1: float = 0.1
    h2: float = 0.5
    adl_enabled: bool = True
    seed: int = 0
    augment: bool = True
    optimizer: str = "adam"

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        for name in ("alpha", "beta"):
            v = getattr(self, name)
            if v is not None and not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if not 0.0 < self.h1 < self.h2 < 1.0:
            raise ValueError(f"need 0 < h1 < h2 < 1, got h1={self.h1}, h2={self.h2}")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown training keys: {', '.join(sorted(unknown))}")
        return cls(**d)


# ---------------------------------------------------------------- schedule

def schedule_value(t: float, alpha: float, beta: float, x: int, y: int, h1: float = 0.1, h2: float = 0.5) -> float:
    """Unfloored number of samples to exclude at epoch ``t``.

    A plateau of ``h2*k*y`` while ``t < h1*k*x``, a linear ramp of slope
    ``-y/x`` down to ``h1*k*y`` at ``t = h2*k*x``, then that lower plateau,
    where ``k = (1 - alpha) * beta``.
    """
    k = (1.0 - alpha) * beta
    if k <= 0:
        return 0.0
    if t < h1 * k * x:
        return h2 * k * y
    if t <= h2 * k * x:
        return -(y / x) * t + (h1 + h2) * k * y
    return h1 * k * y


def schedule_n(t: int, alpha: float, beta: float, x: int, y: int, h1: float = 0.1, h2: float = 0.5) -> int:
    """Samples excluded at epoch ``t`` (1-based), floored and clamped to [0, y - 1]."""
    if not 1 <= t <= x:
        raise ValueError(f"epoch {t} outside [1, {x}]")
    v = schedule_value(t, alpha, beta, x, y, h1, h2)
    n = int(math.floor(v + _FLOOR_SLACK))
    return max(0, min(n, y - 1))


# ---------------------------------------------------------------- loss

def per_sample_dice_loss(pred: Tensor, target, eps: float = 1.0) -> Tensor:
    """Soft Dice loss per batch item: 1 - (2 sum(p g) + eps) / (sum(p) + sum(g) + eps)."""
    g = np.asarray(target, dtype=pred.dtype)
    if g.size != pred.size:
        raise ValueError(f"prediction {pred.shape} and target {g.shape} differ in size")
    g = Tensor(g.reshape(pred.shape))
    axes = tuple(range(1, len(pred.shape)))
    inter = ops.sum(ops.mul(pred, g), axis=axes)
    denom = ops.sum(pred, axis=axes) + g.data.sum(axis=axes) + eps
    return 1.0 - (2.0 * inter + eps) / denom


def dice_loss(pred: Tensor, target, eps: float = 1.0) -> Tensor:
    """Batch mean of :func:`per_sample_dice_loss` for NCHW input, else Dice over the whole array."""
    if len(pred.shape) == 4:
        return ops.mean(per_sample_dice_loss(pred, target, eps))
    return _whole_dice_loss(pred, target, eps)


def _whole_dice_loss(pred: Tensor, target, eps: float) -> Tensor:
    g = Tensor(np.asarray(target, dtype=pred.dtype).reshape(pred.shape))
    inter = ops.sum(ops.mul(pred, g))
    return 1.0 - (2.0 * inter + eps) / (ops.sum(pred) + float(g.data.sum()) + eps)


# ---------------------------------------------------------------- ledger

class LossLedger:
    """Per-epoch, per-sample loss values and exclusion flags."""

    def __init__(self, sample_ids: Sequence[int]):
        self.sample_ids = sorted(int(s) for s in sample_ids)
        self.rows: Dict[int, Dict[int, tuple]] = {}

    @property
    def y(self) -> int:
        return len(self.sample_ids)

    def record(self, epoch: int, sample_id: int, loss: float, excluded: bool) -> None:
        self.rows.setdefault(epoch, {})[int(sample_id)] = (float(loss), bool(excluded))

    def losses(self, epoch: int) -> Dict[int, float]:
        return {sid: v[0] for sid, v in self.rows.get(epoch, {}).items()}

    def excluded(self, epoch: int) -> set:
        return {sid for sid, v in self.rows.get(epoch, {}).items() if v[1]}

    def epochs(self) -> List[int]:
        return sorted(self.rows)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "sample_id", "loss", "excluded"])
            for epoch in self.epochs():
                for sid in sorted(self.rows[epoch]):
                    loss, excl = self.rows[epoch][sid]
                    w.writerow([epoch, sid, f"{loss:.6f}", int(excl)])

    @classmethod
    def read_csv(cls, path) -> "LossLedger":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        ledger = cls({int(r["sample_id"]) for r in rows})
        for r in rows:
            ledger.record(int(r["epoch"]), int(r["sample_id"]), float(r["loss"]), r["excluded"] == "1")
        return ledger


def rank_and_exclude(ledger: LossLedger, t: int, n: int) -> set:
    """The ``n`` highest-loss samples of epoch ``t - 1``; ties go to the smaller id."""
    if n < 0:
        raise ValueError("n must be >= 0")
    if n >= ledger.y:
        raise ValueError(f"cannot exclude {n} of {ledger.y} samples")
    if n == 0 or t <= 1:
        return set()
    prev = ledger.losses(t - 1)
    missing = [sid for sid in ledger.sample_ids if sid not in prev]
    if missing:
        raise ValueError(f"no epoch-{t - 1} loss for samples {missing[:5]}")
    ranked = sorted(ledger.sample_ids, key=lambda sid: (-prev[sid], sid))
    return set(ranked[:n])


# ---------------------------------------------------------------- data

def augment_pair(image: np.ndarray, mask: np.ndarray) -> list:
    """The pair itself plus its +90 (clockwise) and -90 degree rotations."""
    image, mask = np.asarray(image), np.asarray(mask)
    if image.shape[-1] != image.shape[-2] or mask.shape[-1] != mask.shape[-2]:
        raise ValueError(f"rotation augmentation needs square images, got {image.shape}")
    rot = lambda a, k: np.ascontiguousarray(np.rot90(a, k=k, axes=(-2, -1)))  # noqa: E731
    return [(image, mask), (rot(image, -1), rot(mask, -1)), (rot(image, 1), rot(mask, 1))]


@dataclass
class SegData:
    """Images and masks as N x 1 x H x W float32 arrays, addressed by sample id."""

    ids: List[int]
    images: np.ndarray
    masks: np.ndarray

    def __post_init__(self):
        self._pos = {sid: i for i, sid in enumerate(self.ids)}

    def __len__(self) -> int:
        return len(self.ids)

    def take(self, ids: Sequence[int]):
        idx = [self._pos[sid] for sid in ids]
        return self.images[idx], self.masks[idx]


def _views(images: np.ndarray, masks: np.ndarray, augment: bool):
    """Stack augmented views; returns (images, masks, views-per-sample)."""
    if not augment:
        return images, masks, 1
    vi, vm = [], []
    for img, msk in zip(images, masks):
        for a, b in augment_pair(img, msk):
            vi.append(a)
            vm.append(b)
    return np.stack(vi), np.stack(vm), 3


def hard_dice(prob: np.ndarray, mask: np.ndarray) -> float:
    """Dice of a probability map binarized at 0.5 against a binary mask."""
    return overlap_metrics(confusion(prob >= 0.5, mask >= 0.5))["dice"]


def evaluate_dice(model: RARUNet, data: SegData, batch_size: int = 8) -> float:
    probs = model.predict(data.images, batch_size=batch_size)
    return float(np.mean([hard_dice(p[0], m[0]) for p, m in zip(probs, data.masks)]))


def forward_losses(model: RARUNet, images: np.ndarray, masks: np.ndarray, augment: bool, batch_size: int) -> np.ndarray:
    """Per-sample Dice losses without building a graph."""
    out = []
    with no_grad():
        for start in range(0, len(images), batch_size):
            vi, vm, k = _views(images[start:start + batch_size], masks[start:start + batch_size], augment)
            losses = per_sample_dice_loss(model(Tensor(vi.astype(model.dtype))), vm).data
            out.append(losses.reshape(-1, k).mean(axis=1))
    return np.concatenate(out) if out else np.zeros(0)


def train_epoch(model: RARUNet, data: SegData, excluded_ids, optimizer, config: TrainConfig,
                rng: np.random.Generator, epoch: int, ledger: LossLedger) -> Dict[int, float]:
    """One pass over the non-excluded samples; returns the loss recorded for every sample."""
    excluded = set(excluded_ids)
    active = [sid for sid in data.ids if sid not in excluded]
    if not active:
        raise ValueError("every training sample is excluded")
    order = [active[i] for i in rng.permutation(len(active))]
    recorded: Dict[int, float] = {}
    for start in range(0, len(order), config.batch_size):
        batch = order[start:start + config.batch_size]
        images, masks = data.take(batch)
        vi, vm, k = _views(images, masks, config.augment)
        model.params.zero_grad()
        losses = per_sample_dice_loss(model(Tensor(vi.astype(model.dtype))), vm)
        loss = ops.mean(losses)
        loss.backward()
        optimizer.step()
        for sid, value in zip(batch, losses.data.reshape(-1, k).mean(axis=1)):
            recorded[sid] = float(value)
    if excluded:
        ex = sorted(excluded)
        images, masks = data.take(ex)
        for sid, value in zip(ex, forward_losses(model, images, masks, config.augment, config.batch_size)):
            recorded[sid] = float(value)
    for sid in data.ids:
        ledger.record(epoch, sid, recorded[sid], sid in excluded)
    return recorded


@dataclass
class TrainResult:
    model: RARUNet
    ledger: LossLedger
    summary: dict
    best_epoch: int
    best_val_dice: float


def train(model: RARUNet, train_data: SegData, val_data: Optional[SegData], config: TrainConfig,
          alpha: float = 1.0, beta: float = 0.0) -> TrainResult:
    """Run ``config.epochs`` epochs and keep the parameters with the best validation Dice.

    ``alpha`` / ``beta`` are the noise level and corrupted proportion used by
    the exclusion schedule; ``config.alpha`` / ``config.beta`` override them.
    """
    alpha = config.alpha if config.alpha is not None else alpha
    beta = config.beta if config.beta is not None else beta
    rng = np.random.default_rng(config.seed)
    optimizer = make_optimizer(config.optimizer, model.params, config.learning_rate)
    ledger = LossLedger(train_data.ids)
    x, y = config.epochs, len(train_data)
    best_val, best_epoch, best_params = -1.0, 0, None
    excluded_counts, val_history, train_history = [], [], []
    for t in range(1, x + 1):
        n = schedule_n(t, alpha, beta, x, y, config.h1, config.h2) if config.adl_enabled else 0
        excluded = rank_and_exclude(ledger, t, n)
        excluded_counts.append(len(excluded))
        losses = train_epoch(model, train_data, excluded, optimizer, config, rng, t, ledger)
        mean_loss = float(np.mean([losses[s] for s in train_data.ids if s not in excluded]))
        train_history.append(mean_loss)
        val = evaluate_dice(model, val_data, config.batch_size) if val_data is not None and len(val_data) else -mean_loss
        val_history.append(val)
        if val > best_val:
            best_val, best_epoch, best_params = val, t, model.params.copy_values()
        logger.info("epoch %d/%d excluded=%d loss=%.4f val_dice=%.4f", t, x, len(excluded), mean_loss, val)
    model.params.load_values(best_params)
    summary = {
        "epochs": x,
        "alpha": alpha,
        "beta": beta,
        "adl_enabled": config.adl_enabled,
        "excluded_counts": excluded_counts,
        "train_loss": [round(v, 6) for v in train_history],
        "val_dice": [round(v, 6) for v in val_history],
        "best_epoch": best_epoch,
        "best_val_dice": round(best_val, 6),
    }
    return TrainResult(model, ledger, summary, best_epoch, best_val)
