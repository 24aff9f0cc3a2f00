"""Exponential moving average of student parameters (mean teacher).

The teacher is a shadow ParamVector updated once per optimizer step
over ALL segments, normalization statistics included, so it is
self-consistent at evaluation time. Evaluation and checkpointing use
eval_params to choose between teacher and student.
"""

from __future__ import annotations

from dataclasses import dataclass

from .backbones import ParamVector
from .errors import ConfigError


@dataclass
class EmaState:
    teacher_params: ParamVector
    beta: float
    updates: int = 0


def init_teacher(student: ParamVector, beta: float) -> EmaState:
    """Teacher starts as an exact copy of the student."""
    if not 0.0 <= beta <= 1.0:
        raise ConfigError(f"EMA decay must be in [0, 1], got {beta}")
    return EmaState(teacher_params=student.copy(), beta=beta, updates=0)


def ema_update(state: EmaState, student: ParamVector) -> EmaState:
    """teacher <- beta * teacher + (1 - beta) * student, elementwise.

    The student vector is read, never written.
    """
    if not state.teacher_params.same_layout(student):
        raise ValueError("EMA teacher layout does not match student layout")
    t = state.teacher_params.values
    t *= state.beta
    t += (1.0 - state.beta) * student.values
    state.updates += 1
    return state


def eval_params(state: EmaState | None, student: ParamVector) -> ParamVector:
    """Parameter set used for validation, test and checkpoint selection.

    The teacher is returned only when EMA is enabled with beta > 0;
    beta = 0 is observationally identical to EMA being disabled.
    """
    if state is not None and state.beta > 0.0:
        return state.teacher_params
    return student
