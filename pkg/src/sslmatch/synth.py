"""Procedural monochrome dataset with class-distinctive grating textures.

Each class is a sinusoidal grating at its own spatial frequency, drawn
at a random orientation and jittered in frequency, phase, amplitude and
brightness, then buried in pixel noise. Orientation is the deliberate
nuisance factor: a handful of labels per class covers only a few
orientations, so a purely supervised model generalizes poorly, while
the unlabeled pool densely samples the orientation circle. The class
signal survives horizontal flips and small shifts (the weak pipeline)
as well as photometric strong operations. Images are quantized to
8-bit so the in-memory pipeline matches a decode from disk.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .data import DatasetSplits, LabeledExample
from .errors import ConfigError
from .seeding import rng_for

SPLIT_COUNTS = {"train": 510, "val": 8, "test": 50}
NOISE_SIGMA = 0.26


def _grating_frequency(class_index: int) -> float:
    return 1.8 + 2.4 * class_index


def generate_example(class_index: int, num_classes: int, side: int,
                     rng: np.random.Generator) -> np.ndarray:
    """One (1, side, side) float32 image in [0, 1], 8-bit quantized.

    Class frequencies sit 2.4 apart with +-0.8 in-class jitter: wide
    intra-class spread relative to the 0.8 empty band between classes,
    so boundary placement needs more labels than a low-label subset
    provides, while the bands keep clusters separated.
    """
    if not 0 <= class_index < num_classes:
        raise ConfigError(f"class index {class_index} out of range for {num_classes} classes")
    freq = _grating_frequency(class_index) + rng.uniform(-0.8, 0.8)
    theta = rng.uniform(0.0, np.pi)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    amplitude = rng.uniform(0.12, 0.38)
    level = rng.uniform(0.35, 0.65)

    coords = (np.arange(side, dtype=np.float64) - (side - 1) / 2) / side
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    axis = np.cos(theta) * xx + np.sin(theta) * yy
    pattern = level + amplitude * np.sin(2.0 * np.pi * freq * axis + phase)
    pattern += rng.normal(0.0, NOISE_SIGMA, size=pattern.shape)
    img = np.clip(pattern, 0.0, 1.0)
    img = np.round(img * 255.0) / 255.0
    return img[np.newaxis, :, :].astype(np.float32)


def _split_examples(split: str, num_classes: int, per_class: int, side: int, seed: int):
    """Deterministic per-(split, class, index) examples."""
    for c in range(num_classes):
        for i in range(per_class):
            rng = rng_for(seed, "synth", split, c, i)
            yield c, i, generate_example(c, num_classes, side, rng)


def build_splits(num_classes: int = 4, side: int = 32, seed: int = 0,
                 counts: dict | None = None) -> DatasetSplits:
    """In-memory dataset identical to what generate_dataset writes to disk."""
    counts = dict(SPLIT_COUNTS, **(counts or {}))
    class_names = [f"class{c}" for c in range(num_classes)]
    pools: dict[str, list[LabeledExample]] = {}
    for split in ("train", "val", "test"):
        pool = [LabeledExample(image=img, label=c)
                for c, _, img in _split_examples(split, num_classes, counts[split], side, seed)]
        pools[split] = pool
    return DatasetSplits(train_labeled=pools["train"], train_unlabeled=[],
                         validation=pools["val"], test=pools["test"],
                         class_names=class_names)


def generate_dataset(out_dir, num_classes: int = 4, side: int = 32, seed: int = 0,
                     counts: dict | None = None) -> Path:
    """Write the image-folder layout: <out>/<split>/<class>/img_NNNN.png."""
    counts = dict(SPLIT_COUNTS, **(counts or {}))
    for split, n in counts.items():
        if n < 0:
            raise ConfigError(f"count for {split!r} must be >= 0, got {n}")
    out_dir = Path(out_dir)
    for split in ("train", "val", "test"):
        for c in range(num_classes):
            (out_dir / split / f"class{c}").mkdir(parents=True, exist_ok=True)
        for c, i, img in _split_examples(split, num_classes, counts[split], side, seed):
            pixels = np.round(img[0] * 255.0).astype(np.uint8)
            Image.fromarray(pixels, mode="L").save(
                out_dir / split / f"class{c}" / f"img_{i:04d}.png")
    return out_dir
