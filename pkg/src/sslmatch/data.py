"""Dataset ingestion, splits, balanced label subsampling and batch iteration.

Images are numpy float32 arrays of shape (channels, height, width) with
values in [0, 1]; channels is 1 or 3. The image-folder layout is
``<root>/{train,val,test}/<class_name>/*.{png,jpg,jpeg,bmp}``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np
from PIL import Image as PILImage

from .errors import ConfigError, DataLayoutError
from .seeding import rng_for

logger = logging.getLogger(__name__)

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp")
SPLIT_NAMES = ("train", "val", "test")


def validate_image(img: np.ndarray) -> None:
    """Check the (C, H, W) image contract; raises ValueError on violation."""
    if not isinstance(img, np.ndarray) or img.ndim != 3:
        raise ValueError(f"image must be a (C, H, W) array, got {getattr(img, 'shape', type(img))}")
    c, h, w = img.shape
    if c not in (1, 3):
        raise ValueError(f"image must have 1 or 3 channels, got {c}")
    if h < 1 or w < 1:
        raise ValueError(f"image sides must be >= 1, got {h}x{w}")
    if not np.isfinite(img).all():
        raise ValueError("image contains non-finite pixels")
    if img.min() < 0.0 or img.max() > 1.0:
        raise ValueError(f"pixels outside [0, 1]: min={img.min()}, max={img.max()}")


@dataclass
class LabeledExample:
    image: np.ndarray
    label: int


@dataclass
class UnlabeledExample:
    image: np.ndarray
    source_index: int


@dataclass
class DatasetSplits:
    train_labeled: list[LabeledExample]
    train_unlabeled: list[UnlabeledExample]
    validation: list[LabeledExample]
    test: list[LabeledExample]
    class_names: list[str]

    @property
    def num_classes(self) -> int:
        return len(self.class_names)


@dataclass
class BatchPlan:
    labeled_batch_size: int
    unlabeled_ratio: int = 1
    shuffle_seed: int = 0

    def __post_init__(self):
        if self.labeled_batch_size < 1:
            raise ConfigError(f"labeled batch size must be >= 1, got {self.labeled_batch_size}")
        if self.unlabeled_ratio < 1:
            raise ConfigError(f"unlabeled ratio must be >= 1, got {self.unlabeled_ratio}")


def decode_image(path: Path, image_side: int) -> np.ndarray:
    """Decode to monochrome (1, side, side) float32 in [0, 1]."""
    with PILImage.open(path) as im:
        im = im.convert("L")
        if image_side is not None and im.size != (image_side, image_side):
            im = im.resize((image_side, image_side), PILImage.BILINEAR)
        arr = np.asarray(im, dtype=np.float32) / 255.0
    return arr[None, :, :]


def _load_split(split_dir: Path, class_names: list[str], image_side: int):
    """Returns (list of (image, class_index)) plus a skipped-file counter."""
    examples: list[tuple[np.ndarray, int]] = []
    skipped = 0
    counts = {}
    for ci, name in enumerate(class_names):
        class_dir = split_dir / name
        files = []
        if class_dir.is_dir():
            files = sorted(p for p in class_dir.iterdir() if p.suffix.lower() in IMAGE_EXTENSIONS)
        counts[name] = len(files)
        for p in files:
            try:
                examples.append((decode_image(p, image_side), ci))
            except Exception as exc:  # unreadable image: skip, keep counting
                skipped += 1
                logger.warning("skipping unreadable image %s: %s", p, exc)
    total = sum(counts.values())
    if total > 0:
        empty = [name for name, n in counts.items() if n == 0]
        if empty:
            raise DataLayoutError(
                f"class folder(s) {empty} in split '{split_dir.name}' contain no images "
                f"while other classes do"
            )
    return examples, skipped


def load_image_folder(root_path, class_names: list[str] | None = None,
                      image_side: int = 128) -> DatasetSplits:
    """Load an image-folder dataset into splits.

    Labels are assigned by folder name. If ``class_names`` is None the
    sorted train-class folder names are used. The train split must be
    present and populated; an empty val or test split is allowed (with
    a warning) so partial desk-scale fixtures still load.
    """
    root = Path(root_path)
    if not root.is_dir():
        raise DataLayoutError(f"dataset root does not exist: {root}")
    train_dir = root / "train"
    if not train_dir.is_dir():
        raise DataLayoutError(f"missing split directory: {train_dir}")
    if class_names is None:
        class_names = sorted(p.name for p in train_dir.iterdir() if p.is_dir())
    if not class_names:
        raise DataLayoutError(f"no class folders found under {train_dir}")

    per_split = {}
    for split in SPLIT_NAMES:
        split_dir = root / split
        if not split_dir.is_dir():
            if split == "train":
                raise DataLayoutError(f"missing split directory: {split_dir}")
            logger.warning("split directory %s missing; treating '%s' as empty", split_dir, split)
            per_split[split] = []
            continue
        examples, skipped = _load_split(split_dir, class_names, image_side)
        if skipped:
            logger.warning("%d unreadable image(s) skipped in split '%s'", skipped, split)
        if not examples and split != "train":
            logger.warning("split '%s' is empty", split)
        per_split[split] = examples

    if not per_split["train"]:
        raise DataLayoutError(f"train split under {root} contains no images")

    return DatasetSplits(
        train_labeled=[LabeledExample(img, lab) for img, lab in per_split["train"]],
        train_unlabeled=[],
        validation=[LabeledExample(img, lab) for img, lab in per_split["val"]],
        test=[LabeledExample(img, lab) for img, lab in per_split["test"]],
        class_names=list(class_names),
    )


def to_three_channel(img: np.ndarray) -> np.ndarray:
    """Duplicate a monochrome channel into three identical RGB channels.

    A 3-channel input passes through unchanged.
    """
    validate_image(img)
    if img.shape[0] == 3:
        return img
    return np.repeat(img, 3, axis=0)


def sample_labeled_subset(train: list[LabeledExample], n_l: int, seed: int,
                          num_classes: int | None = None):
    """Balanced labeled subset: exactly n_l / C examples per class.

    Selection is uniform without replacement and deterministic for a
    fixed seed. Returns (labeled, unlabeled) where the unlabeled pool
    is every remaining train image with its label stripped; the two
    parts partition the train list.
    """
    if num_classes is None:
        num_classes = max(ex.label for ex in train) + 1
    if n_l % num_classes != 0:
        raise ConfigError(f"n_l={n_l} not divisible by class count {num_classes}")
    per_class = n_l // num_classes
    by_class: dict[int, list[int]] = {c: [] for c in range(num_classes)}
    for idx, ex in enumerate(train):
        by_class[ex.label].append(idx)

    rng = rng_for(seed, "labeled-subset")
    chosen: set[int] = set()
    for c in range(num_classes):
        pool = by_class[c]
        if len(pool) < per_class:
            raise ConfigError(
                f"class {c} has only {len(pool)} train examples, need {per_class}"
            )
        picks = rng.choice(len(pool), size=per_class, replace=False)
        chosen.update(pool[i] for i in picks)

    labeled = [train[i] for i in sorted(chosen)]
    unlabeled = [
        UnlabeledExample(train[i].image, source_index=i)
        for i in range(len(train))
        if i not in chosen
    ]
    return labeled, unlabeled


def _unlabeled_stream_index(pool_size: int, seed: int, index: int) -> int:
    """Position `index` of the infinite cyclically reshuffled unlabeled stream."""
    cycle, pos = divmod(index, pool_size)
    perm = rng_for(seed, "unlabeled-cycle", cycle).permutation(pool_size)
    return int(perm[pos])


def iterate_batches(splits: DatasetSplits, plan: BatchPlan, epoch: int
                    ) -> Iterator[tuple[list[LabeledExample], list[UnlabeledExample]]]:
    """One epoch of paired (labeled, unlabeled) batches.

    Yields floor(n_l / B) pairs: labeled batches of size B from a
    per-epoch shuffle, unlabeled batches of size mu*B drawn from a
    cyclic stream with its own shuffle, so the larger pool is consumed
    across epochs rather than resampled each one.
    """
    n_l = len(splits.train_labeled)
    b = plan.labeled_batch_size
    mu = plan.unlabeled_ratio
    if n_l < b:
        raise ConfigError(f"labeled pool ({n_l}) smaller than batch size ({b})")
    n_u = len(splits.train_unlabeled)
    if n_u == 0:
        raise ConfigError("unlabeled pool is empty; paired iteration needs unlabeled data")

    num_batches = n_l // b
    lab_perm = rng_for(plan.shuffle_seed, "labeled-epoch", epoch).permutation(n_l)
    unlab_offset = epoch * num_batches * mu * b

    # Materialize the unlabeled permutation(s) touched by this epoch lazily per cycle.
    perm_cache: dict[int, np.ndarray] = {}

    def unlab_at(stream_idx: int) -> UnlabeledExample:
        cycle, pos = divmod(stream_idx, n_u)
        if cycle not in perm_cache:
            perm_cache[cycle] = rng_for(plan.shuffle_seed, "unlabeled-cycle", cycle).permutation(n_u)
        return splits.train_unlabeled[int(perm_cache[cycle][pos])]

    for bi in range(num_batches):
        lab_idx = lab_perm[bi * b:(bi + 1) * b]
        labeled = [splits.train_labeled[int(i)] for i in lab_idx]
        start = unlab_offset + bi * mu * b
        unlabeled = [unlab_at(start + j) for j in range(mu * b)]
        yield labeled, unlabeled


def iterate_labeled(pool: list[LabeledExample], batch_size: int, seed: int, epoch: int,
                    drop_last: bool = False) -> Iterator[list[LabeledExample]]:
    """Plain labeled-only batches for the supervised baselines."""
    n = len(pool)
    if n == 0:
        raise ConfigError("labeled pool is empty")
    perm = rng_for(seed, "supervised-epoch", epoch).permutation(n)
    stop = (n // batch_size) * batch_size if drop_last else n
    for start in range(0, stop, batch_size):
        idx = perm[start:start + batch_size]
        if len(idx) == 0:
            break
        yield [pool[int(i)] for i in idx]
