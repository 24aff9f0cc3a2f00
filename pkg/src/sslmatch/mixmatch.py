"""MixMatch: label guessing, sharpening, MixUp batch composition and loss.

The unsupervised target for each unlabeled image is the sharpened mean
prediction over K weak augmentations. Augmented labeled and unlabeled
examples are concatenated and shuffled into a mixing pool W; the first
B pool entries mix with the labeled batch, the remaining K*B with the
K augmented copies of the unlabeled batch. The loss is mean
cross-entropy on the mixed labeled part plus a weighted mean Brier
score on the mixed unlabeled part, with the weight ramped up linearly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
import torch

from . import losses
from .backbones import Backbone
from .data import LabeledExample, UnlabeledExample
from .errors import ConfigError

AugmentFn = Callable[[np.ndarray, np.random.Generator], np.ndarray]


@dataclass
class MixMatchConfig:
    k: int = 2
    temperature: float = 0.5
    alpha: float = 0.9
    lambda_u: float = 25.0
    rampup_steps: int | None = None  # resolved to 25% of total steps when None

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError(f"K must be >= 1, got {self.k}")
        if self.temperature <= 0:
            raise ConfigError(f"temperature must be > 0, got {self.temperature}")
        if self.alpha <= 0:
            raise ConfigError(f"alpha must be > 0, got {self.alpha}")
        if self.lambda_u < 0:
            raise ConfigError(f"lambda_u must be >= 0, got {self.lambda_u}")


@dataclass
class MixedExample:
    image: np.ndarray
    target: np.ndarray  # soft label
    lam: float


class MixMatchLoss(NamedTuple):
    total: torch.Tensor
    supervised: torch.Tensor
    unsupervised: torch.Tensor  # unweighted; total = supervised + lambda_u * unsupervised


def sharpen(p: np.ndarray, temperature: float) -> np.ndarray:
    """Entropy reduction: p_i^(1/T) renormalized. T=1 is the identity."""
    if temperature <= 0:
        raise ConfigError(f"temperature must be > 0, got {temperature}")
    p = np.asarray(p, dtype=np.float64)
    if p.sum() <= 0:
        raise ValueError("cannot sharpen an all-zero distribution")
    powered = p ** (1.0 / temperature)
    return powered / powered.sum()


def sample_mix_coefficient(alpha: float, rng: np.random.Generator, size=None):
    """Beta(alpha, alpha) draw folded to [0.5, 1] via max(lam, 1 - lam)."""
    if alpha <= 0:
        raise ConfigError(f"alpha must be > 0, got {alpha}")
    lam = rng.beta(alpha, alpha, size=size)
    folded = np.maximum(lam, 1.0 - lam)
    return float(folded) if size is None else folded


def mixup(a: tuple[np.ndarray, np.ndarray], b: tuple[np.ndarray, np.ndarray],
          lam: float) -> MixedExample:
    """Convex combination of two (image, soft target) pairs."""
    img_a, tgt_a = a
    img_b, tgt_b = b
    if img_a.shape != img_b.shape:
        raise ValueError(f"image shape mismatch: {img_a.shape} vs {img_b.shape}")
    if np.shape(tgt_a) != np.shape(tgt_b):
        raise ValueError(f"target shape mismatch: {np.shape(tgt_a)} vs {np.shape(tgt_b)}")
    image = lam * img_a + (1.0 - lam) * img_b
    target = lam * np.asarray(tgt_a, dtype=np.float64) + (1.0 - lam) * np.asarray(tgt_b, dtype=np.float64)
    return MixedExample(image=image.astype(img_a.dtype), target=target, lam=lam)


def _predict_probs(model: Backbone, images: list[np.ndarray]) -> np.ndarray:
    """(N, C) softmax predictions, gradient-free."""
    with torch.no_grad():
        logits = model.logits_t(model._to_tensor(images), train=False)
        probs = torch.softmax(logits, dim=-1)
    return probs.cpu().numpy().astype(np.float64)


def guess_label(model: Backbone, u: UnlabeledExample, k: int,
                rng: np.random.Generator, weak_fn: AugmentFn) -> np.ndarray:
    """Mean prediction over K independent weak augmentations of one image."""
    if k < 1:
        raise ConfigError(f"K must be >= 1, got {k}")
    views = [weak_fn(u.image, rng) for _ in range(k)]
    return _predict_probs(model, views).mean(axis=0)


def compose_batch(x_batch: list[LabeledExample], u_batch: list[UnlabeledExample],
                  cfg: MixMatchConfig, model: Backbone, rng: np.random.Generator,
                  weak_fn: AugmentFn) -> tuple[list[MixedExample], list[MixedExample]]:
    """Build the mixed batches (X_hat of size B, U_hat of size K*B).

    The K augmented copies used for label guessing are the same copies
    that enter the mixing pool. Pseudo-label targets carry no gradient.
    """
    if len(x_batch) != len(u_batch):
        raise ConfigError(
            f"MixMatch needs equal batch sizes, got |X|={len(x_batch)}, |U|={len(u_batch)}"
        )
    b = len(x_batch)
    num_classes = model.num_classes

    x_aug = [(weak_fn(ex.image, rng), losses.one_hot(ex.label, num_classes)) for ex in x_batch]

    u_views: list[list[np.ndarray]] = [
        [weak_fn(u.image, rng) for _ in range(cfg.k)] for u in u_batch
    ]
    flat_views = [img for views in u_views for img in views]
    probs = _predict_probs(model, flat_views).reshape(b, cfg.k, num_classes)
    pseudo = [sharpen(probs[i].mean(axis=0), cfg.temperature) for i in range(b)]
    u_aug = [(img, pseudo[i]) for i, views in enumerate(u_views) for img in views]

    pool = x_aug + u_aug  # (K+1)*B entries
    order = rng.permutation(len(pool))
    w = [pool[int(i)] for i in order]

    x_mixed = [
        mixup(x_aug[i], w[i], sample_mix_coefficient(cfg.alpha, rng)) for i in range(b)
    ]
    u_mixed = [
        mixup(u_aug[j], w[b + j], sample_mix_coefficient(cfg.alpha, rng))
        for j in range(cfg.k * b)
    ]
    return x_mixed, u_mixed


def rampup_lambda(step: int, cfg: MixMatchConfig) -> float:
    """Linear ramp of lambda_u from 0 to its maximum over rampup_steps."""
    if cfg.rampup_steps is None or cfg.rampup_steps <= 0:
        raise ConfigError(f"rampup_steps must be a positive integer, got {cfg.rampup_steps}")
    if step < 0:
        raise ConfigError(f"step must be >= 0, got {step}")
    return cfg.lambda_u * min(1.0, step / cfg.rampup_steps)


def mixmatch_loss(model: Backbone, x_mixed: list[MixedExample], u_mixed: list[MixedExample],
                  lambda_u: float, k: int, b: int) -> MixMatchLoss:
    """Composite loss over the mixed batches.

    total = (1/B) sum_{X_hat} H(y, f(x)) + (lambda_u/(K B)) sum_{U_hat} ||q - f(u)||^2.
    Gradients flow through the model predictions only; targets are
    constants. The returned unsupervised term is unweighted.
    """
    if lambda_u < 0:
        raise ConfigError(f"lambda_u must be >= 0, got {lambda_u}")
    if len(x_mixed) != b or len(u_mixed) != k * b:
        raise ConfigError(
            f"expected |X_hat|={b} and |U_hat|={k * b}, got {len(x_mixed)} and {len(u_mixed)}"
        )
    images = model._to_tensor([ex.image for ex in x_mixed + u_mixed])
    logits = model.logits_t(images)
    preds = torch.softmax(logits, dim=-1)

    x_targets = torch.from_numpy(np.stack([ex.target for ex in x_mixed])).to(preds.dtype)
    u_targets = torch.from_numpy(np.stack([ex.target for ex in u_mixed])).to(preds.dtype)

    supervised = losses.cross_entropy_t(x_targets, preds[:b]).sum() / b
    unsupervised = losses.brier_t(u_targets, preds[b:]).sum() / (k * b)
    total = supervised + lambda_u * unsupervised
    return MixMatchLoss(total=total, supervised=supervised, unsupervised=unsupervised)
