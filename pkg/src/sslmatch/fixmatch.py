"""FixMatch: thresholded hard pseudo-labels over weak/strong pairs.

The student's prediction on a weakly augmented unlabeled image yields a
hard pseudo-label; only predictions whose confidence exceeds tau
contribute to the unsupervised cross-entropy on the strongly augmented
view. The weight lambda_u is constant -- the threshold replaces any
ramp-up. The unsupervised denominator is mu*B regardless of how many
examples pass the mask.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import torch

from . import losses
from .backbones import Backbone
from .data import LabeledExample, UnlabeledExample
from .errors import ConfigError
from .mixmatch import AugmentFn, _predict_probs


@dataclass
class FixMatchConfig:
    mu: int = 4
    tau: float = 0.7
    lambda_u: float = 5.0

    def __post_init__(self):
        if self.mu < 1:
            raise ConfigError(f"mu must be >= 1, got {self.mu}")
        if not 0.0 <= self.tau <= 1.0:
            raise ConfigError(f"tau must be in [0, 1], got {self.tau}")
        if self.lambda_u < 0:
            raise ConfigError(f"lambda_u must be >= 0, got {self.lambda_u}")


@dataclass
class PseudoLabeledExample:
    u: UnlabeledExample
    q: np.ndarray       # soft prediction from the weak view
    q_hat: int          # argmax with lowest-index tie-break
    confident: bool


class FixMatchLoss(NamedTuple):
    total: torch.Tensor
    supervised: torch.Tensor
    unsupervised: torch.Tensor  # unweighted; total = supervised + lambda_u * unsupervised
    mask_rate: float


class PreparedFixMatchBatch(NamedTuple):
    """Gradient-free composition: frozen views, targets and mask."""
    x_weak: list[np.ndarray]
    y: np.ndarray           # (B,) int labels
    u_strong: list[np.ndarray]
    q_hat: np.ndarray       # (mu*B,) int pseudo-labels
    mask: np.ndarray        # (mu*B,) bool confidence mask


def confidence_mask(q: np.ndarray, tau: float) -> bool:
    """True iff max(q) strictly exceeds tau."""
    return bool(np.max(q) > tau)


def pseudo_label(model: Backbone, u: UnlabeledExample, rng: np.random.Generator,
                 weak_fn: AugmentFn, tau: float = 0.7) -> PseudoLabeledExample:
    """Hard pseudo-label from the prediction on one weak augmentation."""
    q = _predict_probs(model, [weak_fn(u.image, rng)])[0]
    q_hat = int(np.argmax(q))  # argmax returns the lowest index on ties
    return PseudoLabeledExample(u=u, q=q, q_hat=q_hat, confident=confidence_mask(q, tau))


def prepare_batch(model: Backbone, x_batch: list[LabeledExample],
                  u_batch: list[UnlabeledExample], cfg: FixMatchConfig,
                  rng: np.random.Generator, weak_fn: AugmentFn,
                  strong_fn: AugmentFn) -> PreparedFixMatchBatch:
    """Augment both batches and compute frozen pseudo-label targets."""
    if len(u_batch) != cfg.mu * len(x_batch):
        raise ConfigError(
            f"|U|={len(u_batch)} must equal mu*|X|={cfg.mu * len(x_batch)}"
        )
    x_weak = [weak_fn(ex.image, rng) for ex in x_batch]
    y = np.array([ex.label for ex in x_batch], dtype=np.int64)

    u_weak = [weak_fn(u.image, rng) for u in u_batch]
    q = _predict_probs(model, u_weak)
    q_hat = q.argmax(axis=1)
    mask = q.max(axis=1) > cfg.tau
    u_strong = [strong_fn(u.image, rng) for u in u_batch]
    return PreparedFixMatchBatch(x_weak=x_weak, y=y, u_strong=u_strong, q_hat=q_hat, mask=mask)


def loss_on_prepared(model: Backbone, batch: PreparedFixMatchBatch,
                     cfg: FixMatchConfig) -> FixMatchLoss:
    """Differentiable loss given a frozen composition."""
    b = len(batch.x_weak)
    mu_b = len(batch.u_strong)
    logits = model.logits_t(model._to_tensor(batch.x_weak + batch.u_strong))
    preds = torch.softmax(logits, dim=-1)

    y_onehot = torch.from_numpy(
        np.stack([losses.one_hot(int(lab), model.num_classes) for lab in batch.y])
    ).to(preds.dtype)
    supervised = losses.cross_entropy_t(y_onehot, preds[:b]).sum() / b

    q_onehot = torch.from_numpy(
        np.stack([losses.one_hot(int(lab), model.num_classes) for lab in batch.q_hat])
    ).to(preds.dtype)
    mask = torch.from_numpy(batch.mask.astype(np.float64)).to(preds.dtype)
    per_u = losses.cross_entropy_t(q_onehot, preds[b:]) * mask
    unsupervised = per_u.sum() / mu_b

    total = supervised + cfg.lambda_u * unsupervised
    return FixMatchLoss(
        total=total,
        supervised=supervised,
        unsupervised=unsupervised,
        mask_rate=float(batch.mask.mean()) if mu_b else 0.0,
    )


def fixmatch_loss(model: Backbone, x_batch: list[LabeledExample],
                  u_batch: list[UnlabeledExample], cfg: FixMatchConfig,
                  rng: np.random.Generator, weak_fn: AugmentFn,
                  strong_fn: AugmentFn) -> FixMatchLoss:
    """Composite loss: supervised CE on weak views plus masked pseudo-label
    CE on strong views. No ramp-up is applied to lambda_u."""
    prepared = prepare_batch(model, x_batch, u_batch, cfg, rng, weak_fn, strong_fn)
    return loss_on_prepared(model, prepared, cfg)
