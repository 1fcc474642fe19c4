"""Immutable tensor values and the recording tape for reverse-mode gradients."""

from __future__ import annotations

import contextlib
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import FormatError, NumericError, UsageError

_default_dtype = np.dtype(np.float32)


def default_dtype() -> np.dtype:
    return _default_dtype


@contextlib.contextmanager
def float64_mode():
    """Create new tensors as float64 inside the block (used by gradient checks)."""
    global _default_dtype
    previous = _default_dtype
    _default_dtype = np.dtype(np.float64)
    try:
        yield
    finally:
        _default_dtype = previous


def check_finite(arr: np.ndarray, what: str = "tensor") -> None:
    if arr.dtype.kind == "f" and not np.isfinite(arr).all():
        bad = np.argwhere(~np.isfinite(arr))[0]
        index = tuple(int(i) for i in bad)
        raise NumericError(f"non-finite value in {what} at index {index}: {arr[index]}")


class Tensor:
    """Dense read-only array, optionally attached to a ``Tape`` node."""

    __slots__ = ("data", "tape", "node")

    def __init__(self, data, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.array(data, dtype=dtype or _default_dtype)
        arr.flags.writeable = False
        self.data = arr
        self.tape: Optional[Tape] = None
        self.node: Optional[int] = None

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        t = cls.__new__(cls)
        arr = np.asarray(arr)
        arr.flags.writeable = False
        t.data = arr
        t.tape = None
        t.node = None
        return t

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dims(self) -> list:
        return list(self.data.shape)

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def tracked(self) -> bool:
        return self.tape is not None

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        tag = f", node={self.node}" if self.tracked else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


@dataclass
class Node:
    tag: str
    inputs: tuple
    backward: Optional[BackwardFn] = None
    shape: tuple = ()
    name: Optional[str] = None


@dataclass
class Tape:
    """Ordered record of operations; input ids always precede their consumer."""

    nodes: list = field(default_factory=list)

    def watch(self, value, name: str) -> Tensor:
        if isinstance(value, Tensor):
            arr = value.data
        else:
            arr = np.array(value, dtype=getattr(value, "dtype", _default_dtype))
        t = Tensor._wrap(arr)
        self.nodes.append(Node("leaf", (), None, t.shape, name))
        t.tape, t.node = self, len(self.nodes) - 1
        return t

    def leaves(self) -> dict:
        return {n.name: i for i, n in enumerate(self.nodes) if n.tag == "leaf"}

    def record(self, tag: str, inputs: Sequence[Tensor], out: np.ndarray, backward: BackwardFn) -> Tensor:
        t = Tensor._wrap(out)
        ids = tuple(x.node if x.tape is self else None for x in inputs)
        self.nodes.append(Node(tag, ids, backward, t.shape))
        t.tape, t.node = self, len(self.nodes) - 1
        return t

    def backward(self, loss: Tensor) -> dict:
        """Gradients of a rank-0 ``loss`` for every watched leaf, keyed by name."""
        if loss.tape is not self:
            raise UsageError("loss was not recorded on this tape")
        if loss.data.ndim != 0:
            raise UsageError(f"backward needs a scalar loss, got shape {loss.shape}")
        grads: list = [None] * len(self.nodes)
        grads[loss.node] = np.ones((), dtype=loss.dtype)
        for i in range(loss.node, -1, -1):
            g = grads[i]
            node = self.nodes[i]
            if g is None or node.backward is None:
                continue
            for src, gi in zip(node.inputs, node.backward(g)):
                if src is None or gi is None:
                    continue
                grads[src] = gi if grads[src] is None else grads[src] + gi
        out = {}
        for name, i in self.leaves().items():
            g = grads[i]
            out[name] = np.zeros(self.nodes[i].shape, dtype=loss.dtype) if g is None else g
        return out


def record(tag: str, inputs: Sequence[Tensor], out: np.ndarray, backward: BackwardFn) -> Tensor:
    """Wrap an op result, recording it when any input is tracked."""
    check_finite(out, tag)
    tapes = {id(x.tape): x.tape for x in inputs if x.tape is not None}
    if not tapes:
        return Tensor._wrap(out)
    if len(tapes) > 1:
        raise UsageError(f"{tag}: inputs recorded on different tapes")
    (tape,) = tapes.values()
    return tape.record(tag, inputs, out, backward)


# XRT1 raw fixture files: b"XRT1", u8 rank, rank x u32 dims (LE), float32 data (LE).
XRT_MAGIC = b"XRT1"


def write_xrt(path, array) -> None:
    arr = np.array(array, dtype="<f4", order="C")
    if arr.ndim > 255:
        raise FormatError("rank too large for XRT1")
    head = XRT_MAGIC + struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    Path(path).write_bytes(head + arr.tobytes())


def read_xrt(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != XRT_MAGIC:
        raise FormatError(f"{path}: not an XRT1 file")
    if len(raw) < 5:
        raise FormatError(f"{path}: truncated XRT1 header")
    rank = raw[4]
    end = 5 + 4 * rank
    if len(raw) < end:
        raise FormatError(f"{path}: truncated XRT1 dims")
    dims = struct.unpack(f"<{rank}I", raw[5:end])
    count = int(np.prod(dims, dtype=np.int64))
    if len(raw) != end + 4 * count:
        raise FormatError(f"{path}: expected {count} floats, found {(len(raw) - end) / 4}")
    return np.frombuffer(raw, dtype="<f4", offset=end).reshape(dims).astype(np.float32)
