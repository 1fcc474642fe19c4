"""Dataset discovery, deterministic splits, preprocessing, augmentation and batching."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

from .errors import IngestionError, ParameterError
from .imageio import read_image, resize_bilinear, supported_extensions, to_channels
from .rng import Rng

SPLIT_NAMES = ("train", "valid", "test")
NORMALIZE_DIVISOR = 255.0


@dataclass
class DatasetManifest:
    class_names: list
    splits: dict = field(default_factory=dict)

    def counts(self, split: str) -> list:
        out = [0] * len(self.class_names)
        for _, label in self.splits.get(split, []):
            out[label] += 1
        return out

    def summary(self) -> str:
        lines = [f"classes: {', '.join(self.class_names)}"]
        for split in SPLIT_NAMES:
            if split in self.splits:
                per = ", ".join(f"{n}={c}" for n, c in zip(self.class_names, self.counts(split)))
                lines.append(f"{split}: {len(self.splits[split])} ({per})")
        return "\n".join(lines)


@dataclass(frozen=True)
class PreprocessConfig:
    target_size: tuple = (224, 224)
    channels: int = 1
    normalize_divisor: float = NORMALIZE_DIVISOR

    def __post_init__(self):
        h, w = self.target_size
        if h < 1 or w < 1:
            raise ParameterError(f"target size must be positive, got {self.target_size}")
        if self.channels not in (1, 3):
            raise ParameterError(f"channels must be 1 or 3, got {self.channels}")
        if self.normalize_divisor != NORMALIZE_DIVISOR:
            raise ParameterError("normalize_divisor is fixed at 255")


@dataclass(frozen=True)
class AugmentConfig:
    rotation_degrees: float = 15.0
    horizontal_flip_prob: float = 0.5
    zoom_range: tuple = (0.9, 1.1)
    shift_fraction: float = 0.1

    def __post_init__(self):
        lo, hi = self.zoom_range
        if not 0 < lo <= 1 <= hi:
            raise ParameterError(f"zoom range must satisfy 0 < min <= 1 <= max, got {self.zoom_range}")
        if not 0 <= self.horizontal_flip_prob <= 1:
            raise ParameterError(f"flip probability must lie in [0, 1], got {self.horizontal_flip_prob}")
        if self.rotation_degrees < 0 or not 0 <= self.shift_fraction <= 1:
            raise ParameterError("rotation must be >= 0 and shift fraction in [0, 1]")

    @classmethod
    def identity(cls) -> "AugmentConfig":
        return cls(0.0, 0.0, (1.0, 1.0), 0.0)


def scan_dataset(root) -> DatasetManifest:
    """Read root/<split>/<Class>/<image> into a manifest with sorted classes and paths."""
    root = Path(root)
    if not root.is_dir():
        raise IngestionError(f"dataset root {root} does not exist or is not a directory")
    exts = supported_extensions()
    found = {}
    for split in SPLIT_NAMES:
        sdir = root / split
        if not sdir.is_dir():
            continue
        classes = sorted(d.name for d in sdir.iterdir() if d.is_dir() and not d.name.startswith("."))
        files = {}
        for cls in classes:
            files[cls] = sorted(
                str(p) for p in (sdir / cls).iterdir()
                if p.is_file() and p.suffix.lower() in exts and not p.name.startswith(".")
            )
        found[split] = files
    if not found or not any(found.values()):
        raise IngestionError(f"{root}: no classes found under train/valid/test")
    class_sets = {s: set(f) for s, f in found.items()}
    reference = set().union(*class_sets.values())
    for split, names in class_sets.items():
        if names != reference:
            missing = sorted(reference - names)
            raise IngestionError(f"{root}: split '{split}' lacks classes {missing}; "
                                 f"class sets must agree across splits")
    class_names = sorted(reference)
    index = {c: i for i, c in enumerate(class_names)}
    splits = {}
    for split, files in found.items():
        splits[split] = sorted(((p, index[c]) for c, ps in files.items() for p in ps))
    return DatasetManifest(class_names, splits)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def split_dataset(items: Sequence, ratios: Sequence[float], seed: int) -> tuple:
    """Fisher-Yates shuffle with ``Rng(seed)`` then cut at round(cumulative_ratio * N)."""
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ParameterError(f"split ratios must be three non-negative numbers summing to 1, got {ratios}")
    shuffled = Rng(seed).shuffle(list(items))
    n = len(shuffled)
    a = _round_half_up(ratios[0] * n)
    b = _round_half_up((ratios[0] + ratios[1]) * n)
    b = min(max(b, a), n)
    return shuffled[:a], shuffled[a:b], shuffled[b:]


def resolve_splits(manifest: DatasetManifest, ratios: Sequence[float], seed: int) -> dict:
    """Final train/valid/test lists for a run.

    The directory's train split is partitioned by ``ratios``. Validation is the
    carved portion when non-empty, else the directory's valid split. Test is the
    directory's test split when present, else the carved test portion.
    """
    if not manifest.splits.get("train"):
        raise IngestionError("dataset has no training images")
    tr, va, te = split_dataset(manifest.splits["train"], ratios, seed)
    return {
        "train": tr,
        "valid": va or list(manifest.splits.get("valid", [])),
        "test": list(manifest.splits.get("test", [])) or te,
    }


def preprocess_pixels(pixels: np.ndarray, config: PreprocessConfig) -> np.ndarray:
    img = to_channels(np.asarray(pixels, dtype=np.float64), config.channels)
    h, w = config.target_size
    if img.shape[1:] != (h, w):
        img = resize_bilinear(img, h, w)
    return np.clip(img / config.normalize_divisor, 0.0, 1.0).astype(np.float32)


def load_and_preprocess(path, config: PreprocessConfig) -> np.ndarray:
    """Decode, convert channels, bilinear-resize and scale by 1/255 -> (C, H, W) float32."""
    return preprocess_pixels(read_image(path), config)


def _warp(img: np.ndarray, sy: np.ndarray, sx: np.ndarray) -> np.ndarray:
    """Bilinear sample ``img`` (C, H, W) at source coords, zero outside the image."""
    c, h, w = img.shape
    padded = np.pad(img, ((0, 0), (1, 1), (1, 1)))
    y, x = sy + 1.0, sx + 1.0
    y0, x0 = np.floor(y), np.floor(x)
    fy, fx = y - y0, x - x0
    y0 = y0.astype(np.int64)
    x0 = x0.astype(np.int64)
    # indices past the border land on the zero frame
    ya, yb = np.clip(y0, 0, h + 1), np.clip(y0 + 1, 0, h + 1)
    xa, xb = np.clip(x0, 0, w + 1), np.clip(x0 + 1, 0, w + 1)
    top = padded[:, ya, xa] * (1 - fx) + padded[:, ya, xb] * fx
    bottom = padded[:, yb, xa] * (1 - fx) + padded[:, yb, xb] * fx
    return top * (1 - fy) + bottom * fy


def rotate(img, degrees: float) -> np.ndarray:
    c, h, w = img.shape
    cy, cx = (h - 1) / 2, (w - 1) / 2
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    t = math.radians(degrees)
    cos, sin = math.cos(t), math.sin(t)
    dy, dx = yy - cy, xx - cx
    return _warp(img, cy + cos * dy - sin * dx, cx + sin * dy + cos * dx)


def zoom(img, scale: float) -> np.ndarray:
    c, h, w = img.shape
    cy, cx = (h - 1) / 2, (w - 1) / 2
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    return _warp(img, cy + (yy - cy) / scale, cx + (xx - cx) / scale)


def shift(img, dy: float, dx: float) -> np.ndarray:
    c, h, w = img.shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    return _warp(img, yy - dy, xx - dx)


def hflip(img) -> np.ndarray:
    return np.ascontiguousarray(img[:, :, ::-1])


def augment(image, config: AugmentConfig, rng: Rng) -> np.ndarray:
    """Rotate, flip, zoom, shift (in that order), then clamp to [0, 1].

    Always draws five numbers from ``rng`` so streams stay aligned whatever
    the configuration.
    """
    img = np.asarray(image, dtype=np.float64)
    u_angle, u_flip, u_zoom, u_dy, u_dx = (rng.random() for _ in range(5))
    c, h, w = img.shape
    angle = (2 * u_angle - 1) * config.rotation_degrees
    if angle != 0:
        img = rotate(img, angle)
    if u_flip < config.horizontal_flip_prob:
        img = hflip(img)
    lo, hi = config.zoom_range
    scale = lo + (hi - lo) * u_zoom
    if scale != 1.0:
        img = zoom(img, scale)
    dy = (2 * u_dy - 1) * config.shift_fraction * h
    dx = (2 * u_dx - 1) * config.shift_fraction * w
    if dy != 0 or dx != 0:
        img = shift(img, dy, dx)
    return np.clip(img, 0.0, 1.0).astype(np.asarray(image).dtype)


class ImageLoader:
    """Callable turning an image reference into a preprocessed (C, H, W) array.

    References may be file paths or already-preprocessed arrays.
    """

    def __init__(self, config: PreprocessConfig, cache: bool = True):
        self.config = config
        self._cache: Optional[dict] = {} if cache else None

    def __call__(self, ref) -> np.ndarray:
        if isinstance(ref, np.ndarray):
            return ref.astype(np.float32, copy=False)
        key = os.fspath(ref)
        if self._cache is not None and key in self._cache:
            return self._cache[key]
        arr = load_and_preprocess(key, self.config)
        arr.flags.writeable = False
        if self._cache is not None:
            self._cache[key] = arr
        return arr


def one_hot(labels: Sequence[int], num_classes: int) -> np.ndarray:
    out = np.zeros((len(labels), num_classes), dtype=np.float32)
    out[np.arange(len(labels)), list(labels)] = 1.0
    return out


def make_batches(items: Sequence, num_classes: int, batch_size: int, shuffle: bool = False,
                 rng: Optional[Rng] = None, loader: Optional[Callable] = None,
                 augment_config: Optional[AugmentConfig] = None) -> Iterator[tuple]:
    """Yield (images[N, C, H, W], one_hot[N, num_classes]) batches.

    Shuffling and augmentation keys are drawn from ``rng`` before the first
    batch is produced; each item's augmentation uses its own derived stream.
    """
    if batch_size < 1:
        raise ParameterError(f"batch size must be >= 1, got {batch_size}")
    if not items:
        raise IngestionError("cannot batch an empty split")
    if (shuffle or augment_config is not None) and rng is None:
        raise ParameterError("shuffling or augmentation needs an rng")
    order = rng.shuffle(list(items)) if shuffle else list(items)
    aug_root = Rng(rng.next_u64()) if augment_config is not None else None
    load = loader or ImageLoader(PreprocessConfig())

    def gen():
        for start in range(0, len(order), batch_size):
            chunk = order[start:start + batch_size]
            images = []
            for k, (ref, _) in enumerate(chunk, start=start):
                img = load(ref)
                if aug_root is not None:
                    img = augment(img, augment_config, aug_root.derive(k))
                images.append(img)
            labels = [label for _, label in chunk]
            yield np.stack(images).astype(np.float32), one_hot(labels, num_classes)

    return gen()
