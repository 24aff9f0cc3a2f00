"""Backbone contract and the flat parameter view.

A Backbone wraps a torch module together with its architecture id,
class count and per-segment trainable mask. ParamVector is the flat
float64 snapshot of every named parameter and buffer; it is the
currency of the EMA teacher, the optimizer and checkpoints.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .errors import ConfigError


@dataclass
class ParamVector:
    values: np.ndarray                       # flat float64
    layout: dict[str, tuple[int, int]]       # name -> (offset, length), tiling values exactly
    trainable: dict[str, bool]               # per-segment flag

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        total = sum(length for _, length in self.layout.values())
        if total != self.values.size:
            raise ValueError(f"layout covers {total} values, vector has {self.values.size}")
        if set(self.trainable) != set(self.layout):
            raise ValueError("trainable mask keys differ from layout keys")

    def validate_finite(self) -> None:
        """Parameter vectors proper must be finite; gradient vectors are
        checked segment-wise by the optimizer instead."""
        if not np.isfinite(self.values).all():
            bad = [name for name in self.layout if not np.isfinite(self.segment(name)).all()]
            raise ValueError(f"non-finite values in segment(s) {bad}")

    def copy(self) -> "ParamVector":
        return ParamVector(self.values.copy(), dict(self.layout), dict(self.trainable))

    def segment(self, name: str) -> np.ndarray:
        off, length = self.layout[name]
        return self.values[off:off + length]

    def same_layout(self, other: "ParamVector") -> bool:
        return self.layout == other.layout


class TinyCNN(nn.Module):
    """Two conv blocks with average pooling and a pooled linear head."""

    def __init__(self, num_classes: int, in_channels: int = 1, width: int = 16):
        super().__init__()
        self.features = nn.Sequential(
            nn.Conv2d(in_channels, width, 3, padding=1),
            nn.ReLU(),
            nn.AvgPool2d(2),
            nn.Conv2d(width, width * 2, 3, padding=1),
            nn.ReLU(),
            nn.AvgPool2d(2),
        )
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.head = nn.Linear(width * 2, num_classes)

    def forward(self, x):
        x = self.features(x)
        x = self.pool(x).flatten(1)
        return self.head(x)


class LinearNet(nn.Module):
    """Flattened-pixel linear classifier; handy as the smallest backbone."""

    def __init__(self, num_classes: int, in_channels: int = 1, input_side: int = 1):
        super().__init__()
        self.head = nn.Linear(in_channels * input_side * input_side, num_classes)

    def forward(self, x):
        return self.head(x.flatten(1))


def _build_module(architecture_id: str, num_classes: int, in_channels: int,
                  input_side: int, pretrained: bool) -> tuple[nn.Module, str]:
    """Returns (module, head segment prefix)."""
    if architecture_id == "tiny-cnn":
        return TinyCNN(num_classes, in_channels), "head."
    if architecture_id == "linear":
        return LinearNet(num_classes, in_channels, input_side), "head."
    if architecture_id == "wrn-50-2":
        from torchvision.models import wide_resnet50_2

        weights = "IMAGENET1K_V1" if pretrained else None
        module = wide_resnet50_2(weights=weights)
        module.fc = nn.Linear(module.fc.in_features, num_classes)
        return module, "fc."
    raise ConfigError(f"unknown architecture id {architecture_id!r}")


class Backbone:
    """f(x; theta): images in, one length-C logit vector per image out."""

    def __init__(self, architecture_id: str, num_classes: int, in_channels: int = 1,
                 input_side: int = 32, pretrained: bool = False, seed: int = 0,
                 dtype: torch.dtype = torch.float32):
        if num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {num_classes}")
        self.architecture_id = architecture_id
        self.num_classes = num_classes
        self.in_channels = 3 if architecture_id == "wrn-50-2" else in_channels
        self.pretrained = pretrained
        self.dtype = dtype
        torch.manual_seed(seed)
        self.module, self.head_prefix = _build_module(
            architecture_id, num_classes, self.in_channels, input_side, pretrained
        )
        self.module.to(dtype)
        self.trainable: dict[str, bool] = {
            name: True for name, _ in self.module.named_parameters()
        }
        for name, _ in self.module.named_buffers():
            self.trainable[name] = False

    # -- flat parameter view ------------------------------------------------

    def _named_tensors(self):
        yield from self.module.named_parameters()
        yield from self.module.named_buffers()

    def param_vector(self) -> ParamVector:
        """Copy-on-read flat snapshot of all parameters and buffers."""
        chunks, layout, offset = [], {}, 0
        for name, tensor in self._named_tensors():
            flat = tensor.detach().cpu().numpy().astype(np.float64).ravel()
            layout[name] = (offset, flat.size)
            offset += flat.size
            chunks.append(flat)
        values = np.concatenate(chunks) if chunks else np.zeros(0)
        pv = ParamVector(values, layout, dict(self.trainable))
        pv.validate_finite()
        return pv

    def load_param_vector(self, pv: ParamVector) -> None:
        pv.validate_finite()
        with torch.no_grad():
            for name, tensor in self._named_tensors():
                if name not in pv.layout:
                    raise ValueError(f"param vector missing segment {name!r}")
                seg = pv.segment(name)
                if seg.size != tensor.numel():
                    raise ValueError(f"segment {name!r} has {seg.size} values, expected {tensor.numel()}")
                tensor.copy_(torch.from_numpy(seg.reshape(tensor.shape).copy()).to(tensor.dtype))

    def zero_params(self) -> None:
        pv = self.param_vector()
        pv.values[:] = 0.0
        self.load_param_vector(pv)

    # -- trainable mask -----------------------------------------------------

    def set_trainable(self, mask: dict[str, bool]) -> None:
        for name in mask:
            if name not in self.trainable:
                raise ValueError(f"unknown segment {name!r}")
        self.trainable.update(mask)
        self._sync_requires_grad()

    def freeze_all_but_head(self) -> None:
        if not any(name.startswith(self.head_prefix) for name in self.trainable):
            raise ConfigError(
                f"{self.architecture_id} has no final segment matching {self.head_prefix!r}"
            )
        for name, _ in self.module.named_parameters():
            self.trainable[name] = name.startswith(self.head_prefix)
        self._sync_requires_grad()

    def unfreeze_all(self) -> None:
        for name, _ in self.module.named_parameters():
            self.trainable[name] = True
        self._sync_requires_grad()

    def is_head_segment(self, name: str) -> bool:
        return name.startswith(self.head_prefix)

    def _sync_requires_grad(self) -> None:
        for name, param in self.module.named_parameters():
            param.requires_grad_(self.trainable[name])

    # -- forward ------------------------------------------------------------

    def _to_tensor(self, batch) -> torch.Tensor:
        arr = np.stack([np.asarray(img) for img in batch])
        if arr.ndim != 4:
            raise ValueError(f"batch must stack to (N, C, H, W), got {arr.shape}")
        if arr.shape[1] != self.in_channels:
            raise ValueError(
                f"{self.architecture_id} expects {self.in_channels} channel(s), got {arr.shape[1]}"
            )
        return torch.from_numpy(arr).to(self.dtype)

    def logits_t(self, images, train: bool = True) -> torch.Tensor:
        """Differentiable logits; accepts an (N, C, H, W) tensor or a list of images."""
        if not isinstance(images, torch.Tensor):
            images = self._to_tensor(images)
        self.module.train(train)
        return self.module(images)

    def tensor_like(self, array, reference: torch.Tensor) -> torch.Tensor:
        """Constant tensor in the reference's dtype, for loss targets."""
        return torch.from_numpy(np.asarray(array)).to(reference.dtype)

    def grad_vector(self) -> ParamVector:
        """Flat gradients after backward(); zero where no grad was produced."""
        chunks, layout, offset = [], {}, 0
        for name, tensor in self._named_tensors():
            if isinstance(tensor, nn.Parameter) and tensor.grad is not None:
                flat = tensor.grad.detach().cpu().numpy().astype(np.float64).ravel()
            else:
                flat = np.zeros(tensor.numel(), dtype=np.float64)
            layout[name] = (offset, flat.size)
            offset += flat.size
            chunks.append(flat)
        values = np.concatenate(chunks) if chunks else np.zeros(0)
        return ParamVector(values, layout, dict(self.trainable))

    def zero_grad(self) -> None:
        self.module.zero_grad(set_to_none=True)


def forward(model: Backbone, batch) -> np.ndarray:
    """Inference-mode logits: (N, num_classes) array, empty for an empty batch."""
    if len(batch) == 0:
        return np.zeros((0, model.num_classes))
    with torch.no_grad():
        logits = model.logits_t(model._to_tensor(batch), train=False)
    return logits.cpu().numpy().astype(np.float64)
