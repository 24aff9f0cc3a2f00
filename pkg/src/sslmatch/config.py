"""Run configuration: flat dotted-key files, resolution and hashing.

Config files are plain text, one ``key = value`` per line with dotted
keys (e.g. ``fixmatch.tau = 0.7``). Values are Python literals; bare
words parse as strings. CLI flags override file values, and the fully
resolved config is persisted next to each run for provenance. The run
hash is computed over the canonical (sorted-key) rendering, so it is
stable under key reordering.
"""

from __future__ import annotations

import ast
import hashlib
from dataclasses import dataclass, field, fields

from .augment import DEFAULT_STRONG_OPS, AugmentationSpec
from .errors import ConfigError
from .fixmatch import FixMatchConfig
from .mixmatch import MixMatchConfig

METHODS = ("mixmatch", "fixmatch", "transfer", "supervised")


def parse_value(text: str):
    text = text.strip()
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        lowered = text.lower()
        if lowered == "true":
            return True
        if lowered == "false":
            return False
        return text.strip("\"'")


def parse_flat_config(text: str) -> dict:
    cfg = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        cfg[key.strip()] = parse_value(value)
    return cfg


def _render_value(value) -> str:
    if isinstance(value, str):
        return f'"{value}"'
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_render_value(v) for v in value) + "]"
    return repr(value)


def render_flat_config(cfg: dict) -> str:
    lines = [f"{key} = {_render_value(cfg[key])}" for key in sorted(cfg)]
    return "\n".join(lines) + "\n"


def config_hash(cfg: dict) -> str:
    """12-hex content hash of the canonical rendering."""
    return hashlib.sha256(render_flat_config(cfg).encode("utf-8")).hexdigest()[:12]


@dataclass
class TransferConfig:
    regime: str = "fine_tuning"  # "feature_extraction" | "fine_tuning"
    learning_rate: float = 1e-3
    weight_decay: float = 0.0
    epochs: int = 50
    batch_size: int = 32
    patience: int | None = 25
    pretrained_path: str | None = None

    def __post_init__(self):
        if self.regime not in ("feature_extraction", "fine_tuning"):
            raise ConfigError(f"unknown transfer regime {self.regime!r}")
        if self.patience is not None and self.patience > self.epochs:
            raise ConfigError(
                f"patience ({self.patience}) must not exceed epochs ({self.epochs})"
            )


@dataclass
class TrainConfig:
    """Every tunable of a single run; one method_config per method."""

    method: str = "fixmatch"
    n_l: int | None = 200          # None = use every train label (fully supervised)
    batch_size: int = 16           # B, labeled batch size for SSL/supervised loops
    n_batches: int | None = None   # n_B, total labeled-batch budget
    epochs: int | None = None      # explicit epoch count, overrides the budget formula
    seed: int = 0
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    weight_decay: float = 0.0
    ema_decay: float = 0.0         # 0 disables the mean teacher
    arch: str = "tiny-cnn"
    image_side: int = 32
    shift_fraction: float = 0.125
    ops_per_image: int = 2
    strong_ops: list = field(default_factory=list)
    mixmatch: MixMatchConfig = field(default_factory=MixMatchConfig)
    fixmatch: FixMatchConfig = field(default_factory=FixMatchConfig)
    transfer: TransferConfig = field(default_factory=TransferConfig)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        if not 0.0 <= self.ema_decay <= 1.0:
            raise ConfigError(f"ema_decay must be in [0, 1], got {self.ema_decay}")
        if not self.strong_ops:
            self.strong_ops = [[name, [lo, hi]] for name, (lo, hi) in DEFAULT_STRONG_OPS]
        else:
            self.strong_ops = [
                [name, [float(rng[0]), float(rng[1])]] for name, rng in self.strong_ops
            ]

    # -- augmentation specs --------------------------------------------------

    def weak_spec(self) -> AugmentationSpec:
        return AugmentationSpec(kind="weak", shift_fraction=self.shift_fraction)

    def strong_spec(self) -> AugmentationSpec:
        ops = [(name, (float(lo), float(hi))) for name, (lo, hi) in self.strong_ops]
        return AugmentationSpec(
            kind="strong",
            shift_fraction=self.shift_fraction,
            strong_ops=ops,
            ops_per_image=self.ops_per_image,
        )

    # -- flat <-> structured --------------------------------------------------

    _TOP_KEYS = {
        "method", "n_l", "batch_size", "n_batches", "epochs", "seed", "optimizer",
        "learning_rate", "weight_decay", "ema_decay", "arch", "image_side",
    }

    def to_flat(self) -> dict:
        flat = {key: getattr(self, key) for key in self._TOP_KEYS}
        flat["augment.shift_fraction"] = self.shift_fraction
        flat["augment.ops_per_image"] = self.ops_per_image
        flat["augment.strong_ops"] = [[name, [lo, hi]] for name, (lo, hi) in self.strong_ops]
        for f in fields(self.mixmatch):
            flat[f"mixmatch.{f.name}"] = getattr(self.mixmatch, f.name)
        for f in fields(self.fixmatch):
            flat[f"fixmatch.{f.name}"] = getattr(self.fixmatch, f.name)
        for f in fields(self.transfer):
            flat[f"transfer.{f.name}"] = getattr(self.transfer, f.name)
        return flat

    @classmethod
    def from_flat(cls, flat: dict) -> "TrainConfig":
        kwargs: dict = {}
        sub: dict[str, dict] = {"mixmatch": {}, "fixmatch": {}, "transfer": {}, "augment": {}}
        valid_sub = {
            "mixmatch": {f.name for f in fields(MixMatchConfig)},
            "fixmatch": {f.name for f in fields(FixMatchConfig)},
            "transfer": {f.name for f in fields(TransferConfig)},
            "augment": {"shift_fraction", "ops_per_image", "strong_ops"},
        }
        aliases = {("transfer", "lr"): "learning_rate"}
        for key, value in flat.items():
            if "." in key:
                prefix, name = key.split(".", 1)
                name = aliases.get((prefix, name), name)
                if prefix not in sub or name not in valid_sub[prefix]:
                    raise ConfigError(f"unknown config key {key!r}")
                sub[prefix][name] = value
            elif key in cls._TOP_KEYS:
                kwargs[key] = value
            else:
                raise ConfigError(f"unknown config key {key!r}")
        for aug_key, field_name in (("shift_fraction", "shift_fraction"),
                                    ("ops_per_image", "ops_per_image"),
                                    ("strong_ops", "strong_ops")):
            if aug_key in sub["augment"]:
                kwargs[field_name] = sub["augment"][aug_key]
        if sub["mixmatch"]:
            kwargs["mixmatch"] = MixMatchConfig(**sub["mixmatch"])
        if sub["fixmatch"]:
            kwargs["fixmatch"] = FixMatchConfig(**sub["fixmatch"])
        if sub["transfer"]:
            kwargs["transfer"] = TransferConfig(**sub["transfer"])
        return cls(**kwargs)

    def resolved_hash(self) -> str:
        return config_hash(self.to_flat())

    def with_overrides(self, overrides: dict) -> "TrainConfig":
        flat = self.to_flat()
        flat.update(overrides)
        return TrainConfig.from_flat(flat)
