"""Fixture builders shared by the test modules."""

from pathlib import Path

import numpy as np

from xraydl.imageio import write_pnm
from xraydl.rng import Rng


def stripe_image(kind: str, rng: Rng, size: int = 32) -> np.ndarray:
    """uint8 stripes (period 8, random phase) plus mild noise."""
    phase = rng.randbelow(8)
    idx = (np.arange(size) + phase) % 8
    line = np.where(idx < 4, 200.0, 40.0)
    img = np.tile(line[:, None], (1, size)) if kind == "Horizontal" else np.tile(line[None, :], (size, 1))
    img = img + rng.uniform((size, size), -25, 25)
    return np.clip(np.round(img), 0, 255).astype(np.uint8)


def make_pattern_dataset(root, per_class: int = 20, size: int = 32, seed: int = 7,
                         splits=("train",)) -> Path:
    """root/<split>/{Horizontal,Vertical}/img_NNN.pgm; 2 * per_class images per split."""
    root = Path(root)
    rng = Rng(seed)
    for split in splits:
        for kind in ("Horizontal", "Vertical"):
            d = root / split / kind
            d.mkdir(parents=True, exist_ok=True)
            for i in range(per_class):
                write_pnm(d / f"img_{i:03d}.pgm", stripe_image(kind, rng, size))
    return root


def pattern_arrays(n_per_class: int = 20, size: int = 32, seed: int = 7):
    """In-memory (image, label) items scaled to [0, 1], shape (1, size, size)."""
    rng = Rng(seed)
    items = []
    for label, kind in enumerate(("Horizontal", "Vertical")):
        for _ in range(n_per_class):
            items.append(((stripe_image(kind, rng, size) / 255.0).astype(np.float32)[None], label))
    return items


def touch_tree(root, layout: dict) -> Path:
    """Create empty-but-valid tiny PGM files: layout = {split: {class: count}}."""
    root = Path(root)
    pixel = b"P5\n1 1\n255\n\x80"
    for split, classes in layout.items():
        for cls, count in classes.items():
            d = root / split / cls
            d.mkdir(parents=True, exist_ok=True)
            for i in range(count):
                (d / f"{i:05d}.pgm").write_bytes(pixel)
    return root


def write_config(path, data_root, **overrides) -> Path:
    values = {
        "data.root": str(data_root),
        "image.size": "32",
        "image.channels": "1",
        "split.train": "0.8",
        "split.valid": "0.2",
        "split.test": "0.0",
        "train.epochs": "3",
        "train.batch_size": "16",
        "augment.enabled": "false",
        "seed": "3",
    }
    values.update({k.replace("__", "."): str(v) for k, v in overrides.items()})
    text = "# test run\n" + "".join(f"{k} = {v}\n" for k, v in values.items())
    Path(path).write_text(text)
    return Path(path)


# -- gradient-check cases shared by the unit and acceptance suites -----------

def _kinkless(shape, rng, margin=0.1):
    """Values bounded away from zero so relu has no kink inside +-epsilon."""
    mag = rng.uniform(shape, margin, 1.0)
    sign = np.where(rng.uniform(shape) < 0.5, -1.0, 1.0)
    return mag * sign


def _distinct(shape, rng):
    """Shuffled, well-separated values so every pooling window has a clear max."""
    n = int(np.prod(shape))
    order = rng.shuffle(list(range(n)))
    return (np.array(order, dtype=np.float64) * 0.05 + rng.uniform((n,), 0, 0.01)).reshape(shape)


def gradient_cases(seed: int) -> dict:
    """name -> (f, params) for every differentiable layer kind."""
    from xraydl import ops
    from xraydl.tensor import Tensor

    rng = Rng(seed)
    cases = {}

    def weighted(out, w):
        return ops.reduce_sum(ops.multiply(out, Tensor(w, np.float64)))

    for padding in ("same", "valid"):
        x, w, b = rng.uniform((2, 2, 5, 5), -1, 1), rng.uniform((3, 2, 3, 3), -1, 1), rng.uniform((3,), -1, 1)
        out_hw = 5 if padding == "same" else 3
        r = rng.uniform((2, 3, out_hw, out_hw), -1, 1)
        cases[f"conv2d_{padding}"] = (
            lambda p, r=r, padding=padding: weighted(ops.conv2d(p["x"], p["w"], p["b"], padding), r),
            {"x": x, "w": w, "b": b})

    r = rng.uniform((1, 2, 2, 3), -1, 1)
    cases["maxpool2d"] = (lambda p, r=r: weighted(ops.maxpool2d(p["x"]), r), {"x": _distinct((1, 2, 4, 6), rng)})

    x, w, b = rng.uniform((3, 5), -1, 1), rng.uniform((5, 4), -1, 1), rng.uniform((4,), -1, 1)
    r = rng.uniform((3, 4), -1, 1)
    cases["affine"] = (lambda p, r=r: weighted(ops.affine(p["x"], p["w"], p["b"]), r), {"x": x, "w": w, "b": b})

    r = rng.uniform((2, 12), -1, 1)
    cases["flatten"] = (lambda p, r=r: weighted(ops.flatten(p["x"]), r), {"x": rng.uniform((2, 3, 2, 2), -1, 1)})

    r = rng.uniform((2, 3), -1, 1)
    cases["global_average_pool"] = (lambda p, r=r: weighted(ops.global_average_pool(p["x"]), r),
                                    {"x": rng.uniform((2, 3, 3, 4), -1, 1)})

    r = rng.uniform((4, 5), -1, 1)
    cases["relu"] = (lambda p, r=r: weighted(ops.relu(p["x"]), r), {"x": _kinkless((4, 5), rng)})
    r = rng.uniform((4, 5), -1, 1)
    cases["sigmoid"] = (lambda p, r=r: weighted(ops.sigmoid(p["x"]), r), {"x": rng.uniform((4, 5), -4, 4)})

    labels = [rng.randbelow(4) for _ in range(5)]
    y = np.eye(4)[labels]
    cases["softmax_cross_entropy"] = (
        lambda p, y=y: ops.categorical_cross_entropy(ops.softmax(p["x"]), Tensor(y, np.float64)),
        {"x": rng.uniform((5, 4), -3, 3)})

    mask = ops.dropout_mask((3, 6), 0.5, rng.derive(0), np.float64)
    r = rng.uniform((3, 6), -1, 1)
    cases["dropout_train"] = (lambda p, r=r, mask=mask: weighted(ops.dropout(p["x"], 0.5, "train", mask=mask), r),
                              {"x": rng.uniform((3, 6), -1, 1)})
    return cases
