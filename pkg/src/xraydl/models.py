"""Layer-stack model descriptions and the forward pass over a parameter store."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from typing import Iterator, Optional

import numpy as np

from . import ops
from .errors import ParameterError, ShapeError
from .rng import Rng
from .tensor import Tape, Tensor

LAYER_KINDS = ("conv2d", "maxpool2d", "dropout", "flatten", "dense", "global_avg_pool")
ACTIVATIONS = (None, "relu", "sigmoid", "softmax")
HEAD_KINDS = ("vgg16", "inception_v3", "efficientnet_b0")
VGG16_BLOCKS = ((64, 64), (128, 128), (256, 256, 256), (512, 512, 512), (512, 512, 512))


@dataclass(frozen=True)
class Layer:
    kind: str
    name: str = ""
    filters: Optional[int] = None
    kernel: Optional[int] = None
    padding: Optional[str] = None
    stride: Optional[int] = None
    units: Optional[int] = None
    activation: Optional[str] = None
    rate: Optional[float] = None

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None and v != ""}

    @classmethod
    def from_dict(cls, d: dict) -> "Layer":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ParameterError(f"unknown layer fields {sorted(extra)}")
        return cls(**d)

    @property
    def has_params(self) -> bool:
        return self.kind in ("conv2d", "dense")


def conv(name, filters, kernel=3, padding="same", stride=1, activation="relu") -> Layer:
    return Layer("conv2d", name, filters=filters, kernel=kernel, padding=padding,
                 stride=stride, activation=activation)


def dense(name, units, activation=None) -> Layer:
    return Layer("dense", name, units=units, activation=activation)


def maxpool() -> Layer:
    return Layer("maxpool2d")


def dropout(rate) -> Layer:
    return Layer("dropout", rate=rate)


def flatten() -> Layer:
    return Layer("flatten")


def global_avg_pool() -> Layer:
    return Layer("global_avg_pool")


def propagate(input_shape, layers) -> tuple:
    """Walk ``layers`` from a (C, H, W) input.

    Returns the per-layer output shapes (batch axis omitted) and an ordered
    dict of parameter name -> shape.
    """
    shape = tuple(input_shape)
    shapes, pshapes = [], {}
    for i, layer in enumerate(layers):
        where = f"layer {i} ({layer.kind}{' ' + layer.name if layer.name else ''})"
        if layer.activation not in ACTIVATIONS:
            raise ParameterError(f"{where}: unknown activation {layer.activation!r}")
        if layer.kind == "conv2d":
            if len(shape) != 3:
                raise ShapeError(f"{where}: expects (C, H, W) input, got {shape}")
            c, h, w = shape
            k, s = layer.kernel, layer.stride
            if not layer.filters or layer.filters < 1 or not k or k < 1 or not s or s < 1:
                raise ParameterError(f"{where}: filters, kernel and stride must be positive")
            ho = ops.conv_output_size(h, k, s, layer.padding)
            wo = ops.conv_output_size(w, k, s, layer.padding)
            if ho <= 0 or wo <= 0:
                raise ShapeError(f"{where}: non-positive output extent from input {shape}")
            pshapes[f"{layer.name}.w"] = (layer.filters, c, k, k)
            pshapes[f"{layer.name}.b"] = (layer.filters,)
            shape = (layer.filters, ho, wo)
        elif layer.kind == "maxpool2d":
            if len(shape) != 3 or shape[1] % 2 or shape[2] % 2:
                raise ShapeError(f"{where}: needs (C, H, W) with even H and W, got {shape}")
            shape = (shape[0], shape[1] // 2, shape[2] // 2)
        elif layer.kind == "dropout":
            if layer.rate is None or not 0.0 <= layer.rate < 1.0:
                raise ParameterError(f"{where}: dropout rate must lie in [0, 1), got {layer.rate}")
        elif layer.kind == "flatten":
            shape = (math.prod(shape),)
        elif layer.kind == "global_avg_pool":
            if len(shape) != 3:
                raise ShapeError(f"{where}: expects (C, H, W) input, got {shape}")
            shape = (shape[0],)
        elif layer.kind == "dense":
            if len(shape) != 1:
                raise ShapeError(f"{where}: expects a flat input, got {shape}")
            if not layer.units or layer.units < 1:
                raise ParameterError(f"{where}: dense width must be >= 1, got {layer.units}")
            pshapes[f"{layer.name}.w"] = (shape[0], layer.units)
            pshapes[f"{layer.name}.b"] = (layer.units,)
            shape = (layer.units,)
        else:
            raise ParameterError(f"{where}: unknown layer kind")
        if layer.has_params and not layer.name:
            raise ParameterError(f"{where}: parametric layers need a name")
        shapes.append(shape)
    return shapes, pshapes


@dataclass
class Param:
    value: np.ndarray
    trainable: bool = True


@dataclass
class ParamStore:
    entries: dict = field(default_factory=dict)

    def __getitem__(self, name) -> np.ndarray:
        return self.entries[name].value

    def __contains__(self, name) -> bool:
        return name in self.entries

    def __iter__(self) -> Iterator[str]:
        return iter(self.entries)

    def __len__(self):
        return len(self.entries)

    def add(self, name: str, value, trainable: bool = True) -> None:
        if name in self.entries:
            raise ParameterError(f"duplicate parameter name {name!r}")
        self.entries[name] = Param(np.asarray(value), trainable)

    def set(self, name: str, value) -> None:
        self.entries[name] = Param(np.asarray(value), self.entries[name].trainable)

    def trainable_names(self) -> list:
        return [k for k, p in self.entries.items() if p.trainable]

    def frozen_names(self) -> list:
        return [k for k, p in self.entries.items() if not p.trainable]

    def count(self, trainable: Optional[bool] = None) -> int:
        return sum(p.value.size for p in self.entries.values()
                   if trainable is None or p.trainable == trainable)

    def shapes(self) -> dict:
        return {k: tuple(p.value.shape) for k, p in self.entries.items()}

    def copy(self) -> "ParamStore":
        return ParamStore({k: Param(p.value.copy(), p.trainable) for k, p in self.entries.items()})

    def merged(self, other: "ParamStore") -> "ParamStore":
        out = self.copy()
        for k, p in other.entries.items():
            out.add(k, p.value.copy(), p.trainable)
        return out

    def identical(self, other: "ParamStore") -> bool:
        if list(self.entries) != list(other.entries):
            return False
        return all(p.trainable == other.entries[k].trainable
                   and p.value.dtype == other.entries[k].value.dtype
                   and np.array_equal(p.value, other.entries[k].value)
                   for k, p in self.entries.items())


def init_params(layers, input_shape, seed: int = 0, prefix: str = "") -> ParamStore:
    """He-uniform for relu-fed weights, Glorot-uniform otherwise, zero biases."""
    _, pshapes = propagate(input_shape, layers)
    rng = Rng(seed)
    store = ParamStore()
    for name, shape in pshapes.items():
        full = prefix + name
        if name.endswith(".b"):
            store.add(full, np.zeros(shape, dtype=np.float32))
            continue
        layer = next(l for l in layers if l.name == name[:-2])
        if layer.kind == "conv2d":
            f, c, k, _ = shape
            fan_in, fan_out = c * k * k, f * k * k
        else:
            fan_in, fan_out = shape
        if layer.activation == "relu":
            limit = math.sqrt(6.0 / fan_in)
        else:
            limit = math.sqrt(6.0 / (fan_in + fan_out))
        store.add(full, rng.uniform(shape, -limit, limit).astype(np.float32))
    return store


@dataclass
class ModelSpec:
    name: str
    input_shape: tuple
    layers: list
    num_classes: int
    head_activation: str

    def __post_init__(self):
        self.input_shape = tuple(self.input_shape)
        self.layers = list(self.layers)
        if self.head_activation not in ("softmax", "sigmoid"):
            raise ParameterError(f"head activation must be softmax or sigmoid, got {self.head_activation!r}")
        shapes, _ = propagate(self.input_shape, self.layers)
        if not shapes or shapes[-1] != (self.num_classes,):
            raise ShapeError(f"model {self.name}: output shape {shapes[-1] if shapes else None} "
                             f"is not ({self.num_classes},)")
        if self.layers[-1].activation != self.head_activation:
            raise ParameterError(f"model {self.name}: last layer activation does not match head_activation")

    def param_shapes(self) -> dict:
        return propagate(self.input_shape, self.layers)[1]

    def to_dict(self) -> dict:
        return {"type": "model", "name": self.name, "input_shape": list(self.input_shape),
                "layers": [l.to_dict() for l in self.layers],
                "num_classes": self.num_classes, "head_activation": self.head_activation}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(d["name"], tuple(d["input_shape"]), [Layer.from_dict(l) for l in d["layers"]],
                   d["num_classes"], d["head_activation"])


@dataclass
class Backbone:
    """Feature extractor: a parameterised layer stack whose weights stay frozen."""

    name: str
    input_shape: tuple
    layers: list
    params: ParamStore

    def output_shape(self) -> tuple:
        return propagate(self.input_shape, self.layers)[0][-1]

    def features(self, batch) -> np.ndarray:
        return run_layers(self.layers, self.params, Tensor(batch), "infer", None, None).data

    def param_shapes(self) -> dict:
        return propagate(self.input_shape, self.layers)[1]

    def to_dict(self) -> dict:
        return {"type": "backbone", "name": self.name, "input_shape": list(self.input_shape),
                "layers": [l.to_dict() for l in self.layers]}

    @classmethod
    def from_dict(cls, d: dict, params: ParamStore) -> "Backbone":
        return cls(d["name"], tuple(d["input_shape"]), [Layer.from_dict(l) for l in d["layers"]], params)


def _check_divisible(input_shape, factor, what):
    if len(input_shape) != 3:
        raise ShapeError(f"{what}: input shape must be (channels, height, width), got {input_shape}")
    c, h, w = input_shape
    if h < factor or w < factor or h % factor or w % factor:
        raise ShapeError(f"{what}: height and width must be divisible by {factor}, got {h}x{w}")


def build_reference_cnn(input_shape, num_classes: int, seed: int = 0) -> tuple:
    _check_divisible(input_shape, 8, "reference CNN")
    layers = []
    for i, filters in enumerate((32, 64, 128), start=1):
        layers += [conv(f"block{i}.conv", filters), maxpool(), dropout(0.25)]
    layers += [flatten(), dense("dense1", 128, "relu"), dropout(0.5),
               dense("dense2", num_classes, "softmax")]
    spec = ModelSpec("reference_cnn", input_shape, layers, num_classes, "softmax")
    return spec, init_params(layers, spec.input_shape, seed)


def _backbone_from_blocks(name, input_shape, blocks, seed) -> Backbone:
    layers = []
    for b, widths in enumerate(blocks, start=1):
        for j, filters in enumerate(widths, start=1):
            layers.append(conv(f"backbone.block{b}.conv{j}", filters))
        layers.append(maxpool())
    params = init_params(layers, input_shape, seed)
    for p in params.entries.values():
        p.trainable = False
    return Backbone(name, tuple(input_shape), layers, params)


def build_vgg16_backbone(input_shape, seed: int = 0) -> Backbone:
    _check_divisible(input_shape, 32, "VGG16 backbone")
    if input_shape[0] != 3:
        raise ShapeError(f"VGG16 backbone expects RGB input, got {input_shape[0]} channels")
    return _backbone_from_blocks("vgg16", input_shape, VGG16_BLOCKS, seed)


def build_test_backbone(input_shape, widths=(8, 16, 32, 64), seed: int = 0) -> Backbone:
    """Small four-block conv/pool backbone for fixtures and quick runs."""
    _check_divisible(input_shape, 2 ** len(widths), "test backbone")
    return _backbone_from_blocks("small", input_shape, [(w,) for w in widths], seed)


def head_layers(head: str, num_classes: int = 4) -> list:
    if head == "vgg16":
        return [flatten(), dropout(0.25), dense("head.dense1", num_classes, "sigmoid")]
    if head == "inception_v3":
        return [flatten(), dense("head.dense1", 1024, "relu"), dropout(0.2),
                dense("head.dense2", num_classes, "sigmoid")]
    if head == "efficientnet_b0":
        return [global_avg_pool(), dropout(0.5), dense("head.dense1", num_classes, "softmax")]
    raise ParameterError(f"unknown head kind {head!r}; expected one of {HEAD_KINDS}")


def build_transfer_model(head: str, backbone: Backbone, num_classes: int = 4, seed: int = 0) -> tuple:
    hl = head_layers(head, num_classes)
    layers = list(backbone.layers) + hl
    spec = ModelSpec(head, backbone.input_shape, layers, num_classes, hl[-1].activation)
    head_params = init_params(hl, backbone.output_shape(), seed)
    params = backbone.params.copy().merged(head_params)
    for name in backbone.params:
        params.entries[name].trainable = False
    return spec, params


def run_layers(layers, params: ParamStore, x: Tensor, mode: str, rng: Optional[Rng],
               tape: Optional[Tape]) -> Tensor:
    def weight(name):
        if tape is not None and params.entries[name].trainable:
            return tape.watch(params[name], name)
        return Tensor._wrap(params[name])

    for i, layer in enumerate(layers):
        try:
            if layer.kind == "conv2d":
                x = ops.conv2d(x, weight(f"{layer.name}.w"), weight(f"{layer.name}.b"),
                               layer.padding, layer.stride)
                x = ops.activation(x, layer.activation)
            elif layer.kind == "dense":
                x = ops.affine(x, weight(f"{layer.name}.w"), weight(f"{layer.name}.b"))
                x = ops.activation(x, layer.activation)
            elif layer.kind == "maxpool2d":
                x = ops.maxpool2d(x)
            elif layer.kind == "dropout":
                x = ops.dropout(x, layer.rate, mode, rng)
            elif layer.kind == "flatten":
                x = ops.flatten(x)
            elif layer.kind == "global_avg_pool":
                x = ops.global_average_pool(x)
            else:
                raise ParameterError(f"unknown layer kind {layer.kind!r}")
        except ShapeError as exc:
            raise ShapeError(f"layer {i} ({layer.kind} {layer.name}): {exc}") from exc
    return x


def forward_model(spec: ModelSpec, params: ParamStore, batch, mode: str = "infer",
                  rng: Optional[Rng] = None) -> tuple:
    """Returns (output, tape); the tape is None in infer mode."""
    if mode not in ("train", "infer"):
        raise ParameterError(f"mode must be 'train' or 'infer', got {mode!r}")
    x = batch if isinstance(batch, Tensor) else Tensor(batch)
    if x.data.ndim != 4 or tuple(x.shape[1:]) != spec.input_shape:
        raise ShapeError(f"batch shape {x.shape} does not match model input {spec.input_shape}")
    if mode == "train" and rng is None:
        raise ParameterError("train mode needs an rng for dropout")
    tape = Tape() if mode == "train" else None
    out = run_layers(spec.layers, params, x, mode, rng, tape)
    return out, tape


def predict_classes(output) -> list:
    """Row-wise argmax; ties go to the lowest index."""
    arr = output.data if isinstance(output, Tensor) else np.asarray(output)
    return [int(i) for i in np.argmax(arr, axis=1)]
