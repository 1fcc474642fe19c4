"""Raster decoding (binary PGM/PPM in-repo, JPEG/PNG via Pillow when present)
and half-pixel-centre bilinear resizing."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import DecodeError, FormatError
from .tensor import read_xrt

try:
    from PIL import Image
except ImportError:  # pragma: no cover - exercised only without Pillow
    Image = None

NATIVE_EXTENSIONS = (".pgm", ".ppm", ".xrt")
PIL_EXTENSIONS = (".jpg", ".jpeg", ".png")


def supported_extensions() -> tuple:
    return NATIVE_EXTENSIONS + (PIL_EXTENSIONS if Image is not None else ())


def _header_tokens(data: bytes, count: int, path) -> tuple:
    """Read ``count`` whitespace-separated header tokens, skipping # comments."""
    tokens, pos = [], 2
    while len(tokens) < count:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos >= len(data):
            raise DecodeError(f"{path}: truncated header")
        if data[pos:pos + 1] == b"#":
            nl = data.find(b"\n", pos)
            if nl < 0:
                raise DecodeError(f"{path}: truncated header comment")
            pos = nl + 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        tok = data[start:pos]
        if not tok.isdigit():
            raise DecodeError(f"{path}: bad header token {tok!r}")
        tokens.append(int(tok))
    # exactly one whitespace byte separates the header from the raster
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise DecodeError(f"{path}: missing raster separator")
    return tokens, pos + 1


def read_pnm(path) -> np.ndarray:
    """Decode binary P5 (gray) / P6 (RGB) with maxval <= 255 to uint8 (H, W[, 3])."""
    data = Path(path).read_bytes()
    magic = data[:2]
    if magic not in (b"P5", b"P6"):
        raise FormatError(f"{path}: unsupported netpbm variant {magic!r}")
    (width, height, maxval), start = _header_tokens(data, 3, path)
    if width < 1 or height < 1:
        raise DecodeError(f"{path}: empty image {width}x{height}")
    if not 1 <= maxval <= 255:
        raise FormatError(f"{path}: only 8-bit samples supported, maxval={maxval}")
    channels = 1 if magic == b"P5" else 3
    need = width * height * channels
    raster = data[start:start + need]
    if len(raster) < need:
        raise DecodeError(f"{path}: expected {need} sample bytes, found {len(raster)}")
    arr = np.frombuffer(raster, dtype=np.uint8).reshape(height, width, channels)
    if maxval != 255:
        arr = np.round(arr.astype(np.float64) * (255.0 / maxval)).clip(0, 255).astype(np.uint8)
    return arr[:, :, 0] if channels == 1 else arr


def write_pnm(path, pixels) -> None:
    arr = np.asarray(pixels)
    if arr.dtype != np.uint8:
        raise FormatError("PNM writer expects uint8 pixels")
    if arr.ndim == 2:
        magic = b"P5"
    elif arr.ndim == 3 and arr.shape[2] == 3:
        magic = b"P6"
    else:
        raise FormatError(f"cannot write shape {arr.shape} as PGM/PPM")
    h, w = arr.shape[:2]
    Path(path).write_bytes(magic + f"\n{w} {h}\n255\n".encode("ascii") + arr.tobytes())


def read_image(path) -> np.ndarray:
    """Pixels as float64 (H, W) or (H, W, 3) on the 0..255 scale."""
    path = Path(path)
    ext = path.suffix.lower()
    if not path.is_file():
        raise DecodeError(f"{path}: no such file")
    if ext in (".pgm", ".ppm"):
        return read_pnm(path).astype(np.float64)
    if ext == ".xrt":
        arr = read_xrt(path).astype(np.float64)
        if arr.ndim == 3 and arr.shape[0] in (1, 3):
            arr = arr.transpose(1, 2, 0)
            arr = arr[:, :, 0] if arr.shape[2] == 1 else arr
        if arr.ndim not in (2, 3):
            raise DecodeError(f"{path}: XRT image must be (H, W) or (C, H, W), got {arr.shape}")
        return arr
    if ext in PIL_EXTENSIONS:
        if Image is None:
            raise FormatError(f"{path}: no decoder available for {ext}")
        try:
            with Image.open(path) as im:
                gray = im.mode in ("1", "L", "LA", "I", "I;16")
                return np.asarray(im.convert("L" if gray else "RGB"), dtype=np.float64)
        except (OSError, ValueError) as exc:
            raise DecodeError(f"{path}: {exc}") from exc
    raise FormatError(f"{path}: unsupported image format {ext or '(none)'}")


def to_channels(pixels: np.ndarray, channels: int) -> np.ndarray:
    """(H, W[, 3]) pixels -> (C, H, W); RGB->gray uses BT.601 luma weights."""
    if pixels.ndim == 2:
        gray = pixels
        return gray[None] if channels == 1 else np.repeat(gray[None], 3, axis=0)
    rgb = pixels.transpose(2, 0, 1)
    if channels == 3:
        return rgb
    return (0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2])[None]


def _axis_weights(n_in: int, n_out: int):
    pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    pos = np.clip(pos, 0, n_in - 1)
    lo = np.floor(pos).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, pos - lo


def resize_bilinear(img: np.ndarray, height: int, width: int) -> np.ndarray:
    """Resize (C, H, W) with half-pixel centres, clamping samples to the edges."""
    c, h, w = img.shape
    y0, y1, fy = _axis_weights(h, height)
    x0, x1, fx = _axis_weights(w, width)
    rows = img[:, y0, :] * (1 - fy)[None, :, None] + img[:, y1, :] * fy[None, :, None]
    return rows[:, :, x0] * (1 - fx) + rows[:, :, x1] * fx
