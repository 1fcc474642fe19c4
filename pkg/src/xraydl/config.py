"""Flat ``key = value`` run configuration.

Lines starting with ``#`` (and anything after `` #`` on a line) are comments.
Recognised keys and defaults are listed in ``KEYS``; any other key is an error.
Task presets (``task = covid | pneumonia | lung_cancer``) set split ratios,
epoch budget and model defaults before the remaining keys are applied.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

from .data import AugmentConfig, PreprocessConfig
from .errors import ConfigError, XrdlError
from .models import HEAD_KINDS
from .train import TrainConfig

MODEL_KINDS = ("reference_cnn",) + HEAD_KINDS
BACKBONES = ("vgg16", "small")
TASKS = ("custom", "covid", "pneumonia", "lung_cancer")

TASK_PRESETS = {
    "covid": {"split": (0.8, 0.2, 0.0), "epochs": 50},
    "pneumonia": {"split": (0.7, 0.2, 0.1), "epochs": 50},
    "lung_cancer": {"split": (0.7, 0.2, 0.1), "epochs": 30, "model_kind": "efficientnet_b0", "channels": 3},
    "custom": {},
}


@dataclass(frozen=True)
class RunConfig:
    task: str = "custom"
    data_root: str = ""
    split: tuple = (0.8, 0.2, 0.0)
    image_size: tuple = (224, 224)
    channels: int = 1
    model_kind: str = "reference_cnn"
    backbone: str = "vgg16"
    backbone_weights: Optional[str] = None
    epochs: int = 50
    batch_size: int = 32
    lr: float = 1e-3
    patience: int = 5
    restore_best: bool = True
    plateau_factor: float = 0.1
    plateau_patience: int = 3
    plateau_min: float = 1e-6
    augment: bool = True
    rotation: float = 15.0
    flip_prob: float = 0.5
    zoom_min: float = 0.9
    zoom_max: float = 1.1
    shift: float = 0.1
    seed: int = 0

    def train_config(self) -> TrainConfig:
        return TrainConfig(max_epochs=self.epochs, batch_size=self.batch_size, learning_rate=self.lr,
                           early_stop_patience=self.patience, lr_factor=self.plateau_factor,
                           lr_patience=self.plateau_patience, min_lr=self.plateau_min,
                           seed=self.seed, restore_best=self.restore_best)

    def preprocess_config(self) -> PreprocessConfig:
        return PreprocessConfig(tuple(self.image_size), self.channels)

    def augment_config(self) -> Optional[AugmentConfig]:
        if not self.augment:
            return None
        return AugmentConfig(self.rotation, self.flip_prob, (self.zoom_min, self.zoom_max), self.shift)

    def input_shape(self) -> tuple:
        return (self.channels, *self.image_size)


def _int(v):
    return int(v)


def _float(v):
    x = float(v)
    if not math.isfinite(x):
        raise ValueError("not finite")
    return x


def _bool(v):
    low = v.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected true/false")


def _size(v):
    parts = v.lower().replace(",", "x").split("x")
    if len(parts) == 1:
        parts = parts * 2
    if len(parts) != 2:
        raise ValueError("expected N or HxW")
    return int(parts[0]), int(parts[1])


def _choice(options):
    def parse(v):
        if v not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return v
    return parse


# key -> (RunConfig field, parser)
KEYS = {
    "task": ("task", _choice(TASKS)),
    "data.root": ("data_root", str),
    "split.train": ("split", _float),
    "split.valid": ("split", _float),
    "split.test": ("split", _float),
    "image.size": ("image_size", _size),
    "image.channels": ("channels", _int),
    "model.kind": ("model_kind", _choice(MODEL_KINDS)),
    "model.backbone": ("backbone", _choice(BACKBONES)),
    "model.backbone_weights": ("backbone_weights", str),
    "train.epochs": ("epochs", _int),
    "train.batch_size": ("batch_size", _int),
    "train.lr": ("lr", _float),
    "train.patience": ("patience", _int),
    "train.restore_best": ("restore_best", _bool),
    "lr_plateau.factor": ("plateau_factor", _float),
    "lr_plateau.patience": ("plateau_patience", _int),
    "lr_plateau.min": ("plateau_min", _float),
    "augment.enabled": ("augment", _bool),
    "augment.rotation": ("rotation", _float),
    "augment.flip_prob": ("flip_prob", _float),
    "augment.zoom_min": ("zoom_min", _float),
    "augment.zoom_max": ("zoom_max", _float),
    "augment.shift": ("shift", _float),
    "seed": ("seed", _int),
}


def parse_config(text: str, base_dir=None, seed_override: Optional[str] = None) -> RunConfig:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split(" #", 1)[0].split("\t#", 1)[0].strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        try:
            values[key] = KEYS[key][1](value)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value {value!r} for {key}: {exc}") from exc

    task = values.get("task", "custom")
    preset = TASK_PRESETS[task]
    cfg = RunConfig(task=task)
    for name in ("split", "epochs", "model_kind", "channels"):
        if name in preset:
            cfg = replace(cfg, **{name: preset[name]})
    split = list(cfg.split)
    for i, part in enumerate(("train", "valid", "test")):
        if f"split.{part}" in values:
            split[i] = values.pop(f"split.{part}")
    cfg = replace(cfg, split=tuple(split))
    for key, value in values.items():
        if key != "task":
            cfg = replace(cfg, **{KEYS[key][0]: value})
    if seed_override is not None and seed_override != "":
        try:
            cfg = replace(cfg, seed=int(seed_override))
        except ValueError as exc:
            raise ConfigError(f"XRDL_SEED must be an integer, got {seed_override!r}") from exc
    if cfg.data_root and base_dir is not None and not Path(cfg.data_root).is_absolute():
        cfg = replace(cfg, data_root=str(Path(base_dir) / cfg.data_root))
    if cfg.backbone_weights and base_dir is not None and not Path(cfg.backbone_weights).is_absolute():
        cfg = replace(cfg, backbone_weights=str(Path(base_dir) / cfg.backbone_weights))
    validate(cfg)
    return cfg


RANGE_CHECKS = (
    ("image.size", lambda c: min(c.image_size) >= 1, "must be positive"),
    ("image.channels", lambda c: c.channels in (1, 3), "must be 1 or 3"),
    ("train.epochs", lambda c: c.epochs >= 1, "must be >= 1"),
    ("train.batch_size", lambda c: c.batch_size >= 1, "must be >= 1"),
    ("train.lr", lambda c: c.lr > 0, "must be positive"),
    ("train.patience", lambda c: c.patience >= 1, "must be >= 1"),
    ("lr_plateau.factor", lambda c: 0 < c.plateau_factor < 1, "must lie in (0, 1)"),
    ("lr_plateau.patience", lambda c: c.plateau_patience >= 1, "must be >= 1"),
    ("lr_plateau.min", lambda c: c.plateau_min >= 0, "must be >= 0"),
    ("augment.rotation", lambda c: c.rotation >= 0, "must be >= 0"),
    ("augment.flip_prob", lambda c: 0 <= c.flip_prob <= 1, "must lie in [0, 1]"),
    ("augment.zoom_min", lambda c: 0 < c.zoom_min <= 1, "must lie in (0, 1]"),
    ("augment.zoom_max", lambda c: c.zoom_max >= 1, "must be >= 1"),
    ("augment.shift", lambda c: 0 <= c.shift <= 1, "must lie in [0, 1]"),
    ("seed", lambda c: c.seed >= 0, "must be non-negative"),
)


def validate(cfg: RunConfig) -> None:
    if not cfg.data_root:
        raise ConfigError("data.root is required")
    if any(r < 0 for r in cfg.split) or abs(sum(cfg.split) - 1.0) > 1e-9:
        raise ConfigError(f"split.train/valid/test must be non-negative and sum to 1, got {cfg.split}")
    for key, ok, message in RANGE_CHECKS:
        if not ok(cfg):
            raise ConfigError(f"{key} {message}, got {getattr(cfg, KEYS[key][0])!r}")
    try:
        cfg.train_config()
        cfg.preprocess_config()
        cfg.augment_config()
    except XrdlError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path, seed_override: Optional[str] = None) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, base_dir=path.parent, seed_override=seed_override)
