"""XRDL checkpoint container and backbone weight import.

Layout (all integers little-endian)::

    b"XRDL"
    u32  version (= 1)
    u32  header length H
    H    header bytes: compact sorted-key JSON {"class_names", "metadata", "spec"}
    per parameter, in model order:
        u32  name length L, L bytes UTF-8 name
        u8   trainable flag (0/1)
        u8   rank R
        R x u32 dims
        u32  element count E (must equal the product of dims)
        E x f32 values, row-major
    u32  CRC-32 (zlib polynomial) of every byte after the magic and before the CRC

File size = 16 + H + sum(L + 10 + 4R + 4E).
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np

from .errors import ConsistencyError, CorruptionError, FormatError, VersionError, XrdlError
from .models import Backbone, ModelSpec, Param, ParamStore

MAGIC = b"XRDL"
VERSION = 1


def atomic_write_bytes(path, data: bytes) -> None:
    """Write via a temp file in the same directory, renamed into place on success."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


@dataclass
class Checkpoint:
    spec: Union[ModelSpec, Backbone]
    params: ParamStore
    class_names: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)
    version: int = VERSION

    def header(self) -> bytes:
        doc = {"class_names": list(self.class_names), "metadata": self.metadata,
               "spec": self.spec.to_dict()}
        return json.dumps(doc, sort_keys=True, separators=(",", ":"), allow_nan=False).encode("utf-8")


def _expected_shapes(spec) -> dict:
    return {k: tuple(v) for k, v in spec.param_shapes().items()}


def _check_consistency(spec, params: ParamStore) -> None:
    want, have = _expected_shapes(spec), params.shapes()
    problems = [f"missing {k}" for k in want if k not in have]
    problems += [f"unexpected {k}" for k in have if k not in want]
    problems += [f"{k}: shape {have[k]} != {want[k]}" for k in want if k in have and have[k] != want[k]]
    if problems:
        raise ConsistencyError("parameters do not match model: " + "; ".join(problems))


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    _check_consistency(ckpt.spec, ckpt.params)
    header = ckpt.header()
    parts = [struct.pack("<II", ckpt.version, len(header)), header]
    for name, p in ckpt.params.entries.items():
        raw = name.encode("utf-8")
        arr = np.ascontiguousarray(p.value, dtype="<f4")
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack("<BB", int(p.trainable), arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(struct.pack("<I", arr.size))
        parts.append(arr.tobytes())
    body = b"".join(parts)
    return MAGIC + body + struct.pack("<I", zlib.crc32(body))


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    try:
        atomic_write_bytes(path, encode_checkpoint(ckpt))
    except OSError as exc:
        raise XrdlError(f"{path}: cannot write checkpoint: {exc}") from exc


class _Reader:
    def __init__(self, buf: bytes, pos: int):
        self.buf, self.pos = buf, pos

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CorruptionError("checkpoint ends inside a record")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode_checkpoint(raw: bytes, source="checkpoint") -> Checkpoint:
    if raw[:4] != MAGIC:
        raise FormatError(f"{source}: bad magic {raw[:4]!r}, expected {MAGIC!r}")
    if len(raw) < 16:
        raise CorruptionError(f"{source}: truncated ({len(raw)} bytes)")
    body, (crc,) = raw[4:-4], struct.unpack("<I", raw[-4:])
    if zlib.crc32(body) != crc:
        raise CorruptionError(f"{source}: CRC mismatch")
    r = _Reader(raw[:-4], 4)
    version, hlen = r.unpack("<II")
    if version > VERSION:
        raise VersionError(f"{source}: format version {version} is newer than supported {VERSION}")
    try:
        doc = json.loads(r.take(hlen).decode("utf-8"))
        sdoc = doc["spec"]
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise CorruptionError(f"{source}: unreadable header: {exc}") from exc
    params = ParamStore()
    while r.pos < len(r.buf):
        (nlen,) = r.unpack("<I")
        name = r.take(nlen).decode("utf-8", errors="strict")
        flag, rank = r.unpack("<BB")
        dims = r.unpack(f"<{rank}I")
        (count,) = r.unpack("<I")
        if count != int(np.prod(dims, dtype=np.int64)):
            raise CorruptionError(f"{source}: {name}: element count {count} disagrees with dims {dims}")
        values = np.frombuffer(r.take(4 * count), dtype="<f4").astype(np.float32).reshape(dims)
        if name in params:
            raise CorruptionError(f"{source}: duplicate parameter {name}")
        params.entries[name] = Param(values, bool(flag))
    try:
        if sdoc.get("type") == "backbone":
            spec = Backbone.from_dict(sdoc, params)
        else:
            spec = ModelSpec.from_dict(sdoc)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConsistencyError(f"{source}: invalid model description: {exc}") from exc
    _check_consistency(spec, params)
    return Checkpoint(spec, params, list(doc.get("class_names", [])), dict(doc.get("metadata", {})), version)


def load_checkpoint(path) -> Checkpoint:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise XrdlError(f"{path}: cannot read checkpoint: {exc}") from exc
    return decode_checkpoint(raw, path)


def export_backbone(backbone: Backbone, path) -> None:
    save_checkpoint(Checkpoint(backbone, backbone.params), path)


def import_backbone_weights(backbone: Backbone, path) -> Backbone:
    """Return a copy of ``backbone`` carrying the checkpoint's weights, all frozen."""
    ckpt = load_checkpoint(path)
    want, have = _expected_shapes(backbone), ckpt.params.shapes()
    problems = [f"missing {k}" for k in want if k not in have]
    problems += [f"unexpected {k}" for k in have if k not in want]
    problems += [f"{k}: shape {have[k]} != {want[k]}" for k in want if k in have and have[k] != want[k]]
    if problems:
        raise ConsistencyError(f"{path}: weights do not fit backbone {backbone.name}: " + "; ".join(problems))
    params = ParamStore({k: Param(ckpt.params[k].copy(), False) for k in want})
    return Backbone(backbone.name, backbone.input_shape, list(backbone.layers), params)
