"""Loss primitives: softmax, categorical cross-entropy and Brier score.

The numpy functions here are the reference arithmetic used for
evaluation and as independent oracles; the torch variants carry
gradients through the training paths and must agree with them
term-by-term.
"""

from __future__ import annotations

import numpy as np
import torch

LOG_CLAMP = 1e-12  # makes cross_entropy total on the closed probability simplex


def validate_soft_label(p: np.ndarray, atol: float = 1e-6) -> None:
    p = np.asarray(p)
    if p.ndim != 1:
        raise ValueError(f"soft label must be 1-D, got shape {p.shape}")
    if not np.isfinite(p).all():
        raise ValueError("soft label contains non-finite entries")
    if p.min() < -atol or p.max() > 1.0 + atol:
        raise ValueError(f"soft label entries outside [0, 1]: {p}")
    if abs(float(p.sum()) - 1.0) > atol:
        raise ValueError(f"soft label sums to {p.sum()}, expected 1")


def softmax(logits: np.ndarray) -> np.ndarray:
    """Shift-invariant softmax over the last axis."""
    z = np.asarray(logits, dtype=np.float64)
    if not np.isfinite(z).all():
        raise ValueError(f"non-finite logits: {z}")
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(target: np.ndarray, pred: np.ndarray) -> float:
    """H(target, pred) = -sum_i target_i * log(pred_i), pred clamped at 1e-12."""
    target = np.asarray(target, dtype=np.float64)
    pred = np.asarray(pred, dtype=np.float64)
    if target.shape != pred.shape:
        raise ValueError(f"dimension mismatch: target {target.shape} vs pred {pred.shape}")
    return float(-(target * np.log(np.maximum(pred, LOG_CLAMP))).sum())


def brier(target: np.ndarray, pred: np.ndarray) -> float:
    """Squared L2 distance between two distributions."""
    target = np.asarray(target, dtype=np.float64)
    pred = np.asarray(pred, dtype=np.float64)
    if target.shape != pred.shape:
        raise ValueError(f"dimension mismatch: target {target.shape} vs pred {pred.shape}")
    return float(((target - pred) ** 2).sum())


def one_hot(label, num_classes: int) -> np.ndarray:
    """(num_classes,) vector for one label, (N, num_classes) for an array."""
    labels = np.asarray(label, dtype=np.int64)
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= num_classes:
        raise ValueError(f"labels must lie in [0, {num_classes}), got {labels}")
    return np.eye(num_classes, dtype=np.float64)[labels]


# --- torch variants (differentiable, batch-first) ---

def softmax_t(logits: torch.Tensor) -> torch.Tensor:
    return torch.softmax(logits, dim=-1)


def cross_entropy_t(target: torch.Tensor, pred: torch.Tensor) -> torch.Tensor:
    """Per-row H(target, pred) for (N, C) probability tensors."""
    return -(target * torch.log(pred.clamp_min(LOG_CLAMP))).sum(dim=-1)


def brier_t(target: torch.Tensor, pred: torch.Tensor) -> torch.Tensor:
    """Per-row squared L2 distance for (N, C) probability tensors."""
    return ((target - pred) ** 2).sum(dim=-1)
