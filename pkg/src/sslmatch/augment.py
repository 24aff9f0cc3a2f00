"""Weak (flip-and-shift) and strong (affine + photometric) augmentation.

Both pipelines are pure functions of (image, rng): equal inputs and
generator state give equal outputs, so they are safe to evaluate in
parallel across a batch. Outputs preserve shape and stay in [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import ConfigError

# Monochrome-safe catalog: 8 operation families (shear and translate each
# split into x/y variants). Hue-style color ops are excluded on purpose.
DEFAULT_STRONG_OPS: list[tuple[str, tuple[float, float]]] = [
    ("identity", (0.0, 0.0)),
    ("brightness", (-0.3, 0.3)),
    ("contrast", (-0.5, 0.5)),
    ("sharpness", (-0.9, 0.9)),
    ("equalize", (0.0, 0.0)),
    ("rotate", (-30.0, 30.0)),
    ("shear_x", (-0.3, 0.3)),
    ("shear_y", (-0.3, 0.3)),
    ("translate_x", (-0.3, 0.3)),
    ("translate_y", (-0.3, 0.3)),
]


@dataclass
class AugmentationSpec:
    kind: str = "weak"  # "weak" | "strong"
    shift_fraction: float = 0.125
    strong_ops: list[tuple[str, tuple[float, float]]] = field(
        default_factory=lambda: [(name, tuple(rng)) for name, rng in DEFAULT_STRONG_OPS]
    )
    ops_per_image: int = 2

    def __post_init__(self):
        if self.kind not in ("weak", "strong"):
            raise ConfigError(f"augmentation kind must be weak|strong, got {self.kind!r}")
        if not 0.0 <= self.shift_fraction <= 0.5:
            raise ConfigError(f"shift_fraction must be in [0, 0.5], got {self.shift_fraction}")
        if self.ops_per_image < 1:
            raise ConfigError(f"ops_per_image must be >= 1, got {self.ops_per_image}")


def _shift_reflect(img: np.ndarray, dy: int, dx: int) -> np.ndarray:
    """Translate by integer pixels using a reflect-padded crop."""
    if dy == 0 and dx == 0:
        return img
    c, h, w = img.shape
    py, px = abs(dy), abs(dx)
    padded = np.pad(img, ((0, 0), (py, py), (px, px)), mode="reflect")
    y0 = py + dy
    x0 = px + dx
    return padded[:, y0:y0 + h, x0:x0 + w]


def weak_augment(img: np.ndarray, rng: np.random.Generator,
                 shift_fraction: float = 0.125) -> np.ndarray:
    """Horizontal flip with probability 0.5 plus a random shift.

    The shift is up to shift_fraction * side in each axis, realized as
    a reflect-padded crop; output dimensions equal the input's.
    """
    out = img
    if rng.random() < 0.5:
        out = out[:, :, ::-1]
    _, h, w = img.shape
    sy = int(round(shift_fraction * h))
    sx = int(round(shift_fraction * w))
    dy = int(rng.integers(-sy, sy + 1)) if sy > 0 else 0
    dx = int(rng.integers(-sx, sx + 1)) if sx > 0 else 0
    out = _shift_reflect(out, dy, dx)
    return np.ascontiguousarray(out, dtype=img.dtype)


def _affine(img: np.ndarray, matrix: np.ndarray, offset_extra=(0.0, 0.0)) -> np.ndarray:
    """Channel-wise affine warp about the image center, reflect-padded."""
    _, h, w = img.shape
    center = np.array([(h - 1) / 2.0, (w - 1) / 2.0])
    # affine_transform maps output coords to input: in = M @ out + offset
    offset = center - matrix @ center + np.asarray(offset_extra)
    out = np.empty_like(img)
    for ci in range(img.shape[0]):
        out[ci] = ndimage.affine_transform(
            img[ci], matrix, offset=offset, order=1, mode="reflect"
        )
    return out


def _equalize(img: np.ndarray) -> np.ndarray:
    """Per-channel histogram equalization on 256 bins."""
    out = np.empty_like(img)
    for ci in range(img.shape[0]):
        chan = img[ci]
        quantized = np.clip((chan * 255.0).astype(np.int64), 0, 255)
        hist = np.bincount(quantized.ravel(), minlength=256)
        cdf = np.cumsum(hist).astype(np.float64)
        cdf /= cdf[-1]
        out[ci] = cdf[quantized].astype(img.dtype)
    return out


def apply_strong_op(img: np.ndarray, name: str, magnitude: float) -> np.ndarray:
    """Apply one catalog operation at the given magnitude; clamps to [0, 1]."""
    _, h, w = img.shape
    if name == "identity":
        out = img
    elif name == "brightness":
        out = img + magnitude
    elif name == "contrast":
        mean = img.mean()
        out = (img - mean) * (1.0 + magnitude) + mean
    elif name == "sharpness":
        kernel = np.ones((1, 3, 3), dtype=np.float64) / 9.0
        blurred = ndimage.convolve(img.astype(np.float64), kernel, mode="reflect")
        out = img + magnitude * (img - blurred)
    elif name == "equalize":
        out = _equalize(img)
    elif name == "rotate":
        theta = np.deg2rad(magnitude)
        mat = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
        out = _affine(img, mat)
    elif name == "shear_x":
        out = _affine(img, np.array([[1.0, 0.0], [magnitude, 1.0]]))
    elif name == "shear_y":
        out = _affine(img, np.array([[1.0, magnitude], [0.0, 1.0]]))
    elif name == "translate_x":
        out = _affine(img, np.eye(2), offset_extra=(0.0, magnitude * w))
    elif name == "translate_y":
        out = _affine(img, np.eye(2), offset_extra=(magnitude * h, 0.0))
    else:
        raise ConfigError(f"unknown strong-augmentation op {name!r}")
    return np.clip(out, 0.0, 1.0).astype(img.dtype)


def strong_augment(img: np.ndarray, rng: np.random.Generator,
                   spec: AugmentationSpec | None = None) -> np.ndarray:
    """Apply ops_per_image operations sampled uniformly from the catalog.

    Magnitudes are drawn uniformly from each op's [lo, hi] range; every
    op clamps back into [0, 1].
    """
    if spec is None:
        spec = AugmentationSpec(kind="strong")
    if not spec.strong_ops:
        raise ConfigError("strong_ops catalog is empty")
    out = img
    for _ in range(spec.ops_per_image):
        name, (lo, hi) = spec.strong_ops[int(rng.integers(len(spec.strong_ops)))]
        magnitude = float(rng.uniform(lo, hi)) if hi > lo else float(lo)
        out = apply_strong_op(out, name, magnitude)
    return out


def make_augment_fn(spec: AugmentationSpec):
    """Bind a spec to its pipeline: returns f(img, rng) -> img."""
    if spec.kind == "weak":
        return lambda img, rng: weak_augment(img, rng, spec.shift_fraction)
    return lambda img, rng: strong_augment(img, rng, spec)
