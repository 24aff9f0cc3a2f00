"""Versioned checkpoint container with atomic write-then-rename."""

from __future__ import annotations

import os
import pickle
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .backbones import ParamVector

FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    architecture_id: str
    num_classes: int
    params: ParamVector            # student parameters at the selected epoch
    ema_params: ParamVector | None  # teacher parameters, when EMA was enabled
    opt_state: dict | None
    epoch: int
    config: dict                   # fully resolved flat config

    def eval_vector(self) -> ParamVector:
        """Parameter set the run evaluated with (teacher when present)."""
        return self.ema_params if self.ema_params is not None else self.params


def _pv_to_dict(pv: ParamVector | None):
    if pv is None:
        return None
    return {"values": pv.values, "layout": pv.layout, "trainable": pv.trainable}


def _pv_from_dict(d) -> ParamVector | None:
    if d is None:
        return None
    return ParamVector(np.asarray(d["values"]), dict(d["layout"]), dict(d["trainable"]))


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    path = Path(path)
    payload = {
        "format_version": FORMAT_VERSION,
        "architecture_id": ckpt.architecture_id,
        "num_classes": ckpt.num_classes,
        "params": _pv_to_dict(ckpt.params),
        "ema_params": _pv_to_dict(ckpt.ema_params),
        "opt_state": ckpt.opt_state,
        "epoch": ckpt.epoch,
        "config": ckpt.config,
    }
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        pickle.dump(payload, fh, protocol=pickle.HIGHEST_PROTOCOL)
    os.replace(tmp, path)


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        payload = pickle.load(fh)
    version = payload.get("format_version")
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format version {version!r}")
    return Checkpoint(
        architecture_id=payload["architecture_id"],
        num_classes=payload["num_classes"],
        params=_pv_from_dict(payload["params"]),
        ema_params=_pv_from_dict(payload["ema_params"]),
        opt_state=payload["opt_state"],
        epoch=payload["epoch"],
        config=payload["config"],
    )
