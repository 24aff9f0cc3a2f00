"""Optimizer step over the flat parameter view.

Adam (beta1=0.9, beta2=0.999, eps=1e-8) and SGD with momentum 0.9.
Weight decay is decoupled from the moment estimates: it is applied as
direct shrinkage of the pre-step parameter value. Only segments with a
true trainable flag are updated.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .backbones import Backbone, ParamVector
from .errors import ConfigError

OPTIMIZER_KINDS = ("adam", "sgd_momentum")


@dataclass
class OptimizerConfig:
    kind: str = "adam"
    learning_rate: float = 1e-3
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    momentum: float = 0.9

    def __post_init__(self):
        if self.kind not in OPTIMIZER_KINDS:
            raise ConfigError(f"optimizer must be one of {OPTIMIZER_KINDS}, got {self.kind!r}")
        if self.learning_rate < 0 or self.weight_decay < 0:
            raise ConfigError("learning rate and weight decay must be nonnegative")


@dataclass
class OptState:
    step_count: int = 0
    exp_avg: np.ndarray | None = None      # Adam first moment
    exp_avg_sq: np.ndarray | None = None   # Adam second moment
    momentum_buf: np.ndarray | None = None  # SGD velocity

    def ensure_shape(self, size: int, kind: str) -> None:
        if kind == "adam":
            if self.exp_avg is None:
                self.exp_avg = np.zeros(size)
                self.exp_avg_sq = np.zeros(size)
        else:
            if self.momentum_buf is None:
                self.momentum_buf = np.zeros(size)


def optimizer_step(model: Backbone, grads: ParamVector, state: OptState,
                   config: OptimizerConfig) -> OptState:
    """One update of the model's trainable segments in place.

    Raises on a non-finite gradient, naming the offending segment.
    Frozen segments are never touched, whatever their gradient.
    """
    params = model.param_vector()
    if not params.same_layout(grads):
        raise ValueError("gradient layout does not match model layout")
    for name in params.layout:
        if params.trainable[name] and not np.isfinite(grads.segment(name)).all():
            raise ConfigError(f"non-finite gradient in segment {name!r}")

    state.ensure_shape(params.values.size, config.kind)
    state.step_count += 1
    lr = config.learning_rate

    mask = np.zeros(params.values.size, dtype=bool)
    for name, (off, length) in params.layout.items():
        if params.trainable[name]:
            mask[off:off + length] = True

    p = params.values
    g = grads.values
    if config.kind == "adam":
        t = state.step_count
        m, v = state.exp_avg, state.exp_avg_sq
        m[mask] = config.beta1 * m[mask] + (1 - config.beta1) * g[mask]
        v[mask] = config.beta2 * v[mask] + (1 - config.beta2) * g[mask] ** 2
        m_hat = m[mask] / (1 - config.beta1 ** t)
        v_hat = v[mask] / (1 - config.beta2 ** t)
        update = m_hat / (np.sqrt(v_hat) + config.eps)
    else:
        buf = state.momentum_buf
        buf[mask] = config.momentum * buf[mask] + g[mask]
        update = buf[mask]
    update = update + config.weight_decay * p[mask]
    p[mask] -= lr * update

    model.load_param_vector(params)
    return state
