"""Supervised training loop shared by the transfer and fully supervised baselines.

Two regimes over a pretrained backbone: feature extraction freezes everything
except the classification head, fine tuning updates all parameters. The same
loop with a fresh backbone and no patience is the fully supervised reference.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .augment import AugmentationSpec, weak_augment
from .backbones import Backbone, ParamVector
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import TransferConfig
from .data import DatasetSplits, iterate_labeled
from .errors import ConfigError
from .evaluation import evaluate_split
from .losses import cross_entropy_t, one_hot, softmax_t
from .metrics import MetricsRecord
from .optim import OptimizerConfig, OptState, optimizer_step
from .seeding import rng_for

REGIMES = ("feature_extraction", "fine_tuning")


def apply_regime(model: Backbone, regime: str) -> None:
    """Configure which parameter segments the optimizer may touch."""
    if regime == "feature_extraction":
        model.freeze_all_but_head()
    elif regime == "fine_tuning":
        model.unfreeze_all()
    else:
        raise ConfigError(f"unknown transfer regime {regime!r}, expected one of {REGIMES}")


class EarlyStopper:
    """Stop after ``patience`` epochs without strict validation improvement.

    Ties do not reset the counter, so the earliest best epoch is kept.
    ``patience=None`` disables stopping.
    """

    def __init__(self, patience: int | None):
        if patience is not None and patience < 1:
            raise ConfigError(f"patience must be >= 1 or None, got {patience}")
        self.patience = patience
        self.best_loss = float("inf")
        self.best_index = -1
        self.epochs_since_best = 0
        self._count = 0

    def update(self, val_loss: float) -> bool:
        """Record one epoch's validation loss; return True if it improved."""
        improved = val_loss < self.best_loss
        if improved:
            self.best_loss = val_loss
            self.best_index = self._count
            self.epochs_since_best = 0
        else:
            self.epochs_since_best += 1
        self._count += 1
        return improved

    @property
    def should_stop(self) -> bool:
        if self.patience is None:
            return False
        return self.epochs_since_best >= self.patience


def stopped_epoch(losses, patience: int | None) -> int:
    """Number of epochs a run with this validation loss sequence executes."""
    stopper = EarlyStopper(patience)
    for i, loss in enumerate(losses):
        stopper.update(loss)
        if stopper.should_stop:
            return i + 1
    return len(losses)


@dataclass
class SupervisedResult:
    best_params: ParamVector
    best_epoch: int
    best_val_loss: float
    best_val_acc: float
    history: list[MetricsRecord] = field(default_factory=list)


def load_pretrained(model: Backbone, path) -> None:
    """Load backbone weights from a checkpoint, keeping the current head.

    Non-head segments must match the checkpoint exactly; the head is copied
    only when the class count agrees, otherwise it keeps its fresh init.
    """
    ckpt = load_checkpoint(path)
    if ckpt.architecture_id != model.architecture_id:
        raise ConfigError(
            f"pretrained checkpoint is for {ckpt.architecture_id!r}, "
            f"model is {model.architecture_id!r}")
    current = model.param_vector()
    source = ckpt.params
    merged = current.copy()
    for name, (offset, length) in current.layout.items():
        if name not in source.layout:
            raise ConfigError(f"pretrained checkpoint is missing segment {name!r}")
        src_off, src_len = source.layout[name]
        if model.is_head_segment(name):
            if src_len == length:
                merged.values[offset:offset + length] = source.values[src_off:src_off + src_len]
            continue
        if src_len != length:
            raise ConfigError(
                f"segment {name!r} has {src_len} values in the checkpoint, expected {length}")
        merged.values[offset:offset + length] = source.values[src_off:src_off + src_len]
    model.load_param_vector(merged)


def train_supervised(model: Backbone, splits: DatasetSplits, cfg: TransferConfig,
                     seed: int, spec: AugmentationSpec | None = None) -> SupervisedResult:
    """Train on the labeled pool with weak augmentation, selecting by validation loss."""
    if not splits.train_labeled:
        raise ConfigError("supervised training needs a labeled training pool")
    if not splits.validation:
        raise ConfigError("supervised training needs a validation split")
    spec = spec or AugmentationSpec()
    opt_cfg = OptimizerConfig(kind="adam", learning_rate=cfg.learning_rate,
                              weight_decay=cfg.weight_decay)
    opt_state = OptState()
    stopper = EarlyStopper(cfg.patience)
    best_params = model.param_vector()
    best_epoch = 0
    best_val_acc = 0.0
    history: list[MetricsRecord] = []
    num_classes = model.num_classes
    step = 0
    t0 = time.monotonic()
    for epoch in range(1, cfg.epochs + 1):
        aug_rng = rng_for(seed, "supervised-augment", epoch)
        epoch_loss = 0.0
        batch_count = 0
        for batch in iterate_labeled(splits.train_labeled, cfg.batch_size, seed, epoch):
            images = [weak_augment(ex.image, aug_rng, spec.shift_fraction) for ex in batch]
            labels = np.array([ex.label for ex in batch], dtype=np.int64)
            targets_np = one_hot(labels, num_classes)

            logits = model.logits_t(images)
            probs = softmax_t(logits)
            targets = model.tensor_like(targets_np, logits)
            loss = cross_entropy_t(targets, probs).mean()
            model.zero_grad()
            loss.backward()
            grads = model.grad_vector()
            opt_state = optimizer_step(model, grads, opt_state, opt_cfg)
            epoch_loss += float(loss.detach())
            batch_count += 1
            step += 1

        train_loss = epoch_loss / max(batch_count, 1)
        val_loss, val_acc = evaluate_split(model, splits.validation)
        history.append(MetricsRecord(
            epoch=epoch, step=step, train_total=train_loss, train_sup=train_loss,
            val_loss=val_loss, val_acc=val_acc,
            wall_seconds=time.monotonic() - t0))
        if stopper.update(val_loss):
            best_params = model.param_vector()
            best_epoch = epoch
            best_val_acc = val_acc
        if stopper.should_stop:
            break
    return SupervisedResult(best_params=best_params, best_epoch=best_epoch,
                            best_val_loss=stopper.best_loss, best_val_acc=best_val_acc,
                            history=history)


def make_pretrained_fixture(path, architecture_id: str = "tiny-cnn", in_channels: int = 1,
                            image_side: int = 32, num_classes: int = 4, seed: int = 7,
                            steps: int = 60) -> Checkpoint:
    """Train briefly on an auxiliary oriented-gradient task and save a checkpoint.

    Stands in for an off-the-shelf pretrained backbone at desk scale: the
    weights have seen real gradient updates on a task disjoint from any
    evaluation data.
    """
    rng = rng_for(seed, "pretrained-fixture")
    model = Backbone(architecture_id, num_classes=num_classes, in_channels=in_channels,
                     input_side=image_side, seed=seed)
    opt_cfg = OptimizerConfig(kind="adam", learning_rate=1e-3)
    opt_state = OptState()
    yy, xx = np.mgrid[0:image_side, 0:image_side].astype(np.float64)
    yy = yy / (image_side - 1)
    xx = xx / (image_side - 1)
    batch = 16
    for _ in range(steps):
        labels = rng.integers(0, num_classes, size=batch)
        images = []
        for label in labels:
            angle = np.pi * label / num_classes + rng.normal(0.0, 0.06)
            ramp = np.cos(angle) * xx + np.sin(angle) * yy
            ramp = (ramp - ramp.min()) / max(ramp.max() - ramp.min(), 1e-9)
            img = ramp + rng.normal(0.0, 0.1, size=ramp.shape)
            img = np.clip(img, 0.0, 1.0).astype(np.float32)
            images.append(np.stack([img] * in_channels, axis=0))
        targets_np = one_hot(labels, num_classes)
        logits = model.logits_t(images)
        probs = softmax_t(logits)
        targets = model.tensor_like(targets_np, logits)
        loss = cross_entropy_t(targets, probs).mean()
        model.zero_grad()
        loss.backward()
        opt_state = optimizer_step(model, model.grad_vector(), opt_state, opt_cfg)
    ckpt = Checkpoint(architecture_id=architecture_id, num_classes=num_classes,
                      params=model.param_vector(), ema_params=None, opt_state=None,
                      epoch=0, config={"fixture_seed": seed, "fixture_steps": steps})
    save_checkpoint(ckpt, path)
    return ckpt
