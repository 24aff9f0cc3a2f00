"""Shared model evaluation: mean cross entropy and accuracy on a split."""

from __future__ import annotations

import numpy as np

from .backbones import Backbone, ParamVector, forward
from .losses import cross_entropy, one_hot, softmax


def evaluate_split(model: Backbone, examples, params: ParamVector | None = None,
                   batch_size: int = 256) -> tuple[float, float]:
    """Return (mean cross entropy, accuracy) over labeled examples.

    When ``params`` is given the model is evaluated under those weights and
    restored afterwards, so a teacher average can be scored without touching
    the live student.
    """
    if not examples:
        raise ValueError("cannot evaluate on an empty split")
    saved = None
    if params is not None:
        saved = model.param_vector()
        model.load_param_vector(params)
    try:
        total_loss = 0.0
        correct = 0
        labels = np.array([ex.label for ex in examples], dtype=np.int64)
        num_classes = model.num_classes
        for start in range(0, len(examples), batch_size):
            chunk = examples[start:start + batch_size]
            logits = forward(model, [ex.image for ex in chunk])
            probs = softmax(logits)
            chunk_labels = labels[start:start + len(chunk)]
            targets = one_hot(chunk_labels, num_classes)
            for p, t in zip(probs, targets):
                total_loss += cross_entropy(t, p)
            correct += int((np.argmax(probs, axis=1) == chunk_labels).sum())
    finally:
        if saved is not None:
            model.load_param_vector(saved)
    n = len(examples)
    return total_loss / n, correct / n
