"""Layer-stack model description, shape inference and float forward pass.

Activations are NHWC. Conv kernels are stored as [k, k, in, out] and dense
kernels as [in, out].
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Union

import numpy as np


@dataclass(frozen=True)
class Conv2D:
    in_channels: int
    out_channels: int
    kernel: int
    stride: int = 1
    padding: str = "same"
    activation: str = "relu"

    def __post_init__(self):
        _positive(self, "in_channels", "out_channels", "kernel", "stride")
        if self.padding not in ("same", "valid"):
            raise ValueError(f"padding must be 'same' or 'valid', got {self.padding!r}")
        if self.activation not in ("relu", "none"):
            raise ValueError(f"conv activation must be relu|none, got {self.activation!r}")


@dataclass(frozen=True)
class MaxPool2D:
    pool: int = 2
    stride: int = 2

    def __post_init__(self):
        _positive(self, "pool", "stride")


@dataclass(frozen=True)
class Flatten:
    pass


@dataclass(frozen=True)
class Dense:
    in_features: int
    out_features: int
    activation: str = "none"

    def __post_init__(self):
        _positive(self, "in_features", "out_features")
        if self.activation not in ("relu", "softmax", "none"):
            raise ValueError(f"dense activation must be relu|softmax|none, got {self.activation!r}")


LayerSpec = Union[Conv2D, MaxPool2D, Flatten, Dense]
_KINDS = {"conv2d": Conv2D, "maxpool2d": MaxPool2D, "flatten": Flatten, "dense": Dense}
_NAMES = {cls: name for name, cls in _KINDS.items()}


def _positive(obj, *names):
    for n in names:
        if int(getattr(obj, n)) < 1:
            raise ValueError(f"{type(obj).__name__}.{n} must be >= 1")


class ShapeError(ValueError):
    pass


@dataclass
class ModelSpec:
    input_shape: tuple[int, int, int]
    layers: list[LayerSpec]
    weights: list[tuple[np.ndarray, np.ndarray] | None] = field(default_factory=list)

    def __post_init__(self):
        self.input_shape = tuple(int(d) for d in self.input_shape)
        self.layers = list(self.layers)
        for i, layer in enumerate(self.layers):
            if isinstance(layer, Dense) and layer.activation == "softmax" and i != len(self.layers) - 1:
                raise ValueError(f"layer {i}: softmax is only allowed on the final layer")
        infer_shapes(self)
        if self.weights:
            self.set_weights(self.weights)

    def set_weights(self, weights) -> None:
        weights = list(weights)
        if len(weights) != len(self.layers):
            raise ShapeError(f"expected {len(self.layers)} weight entries, got {len(weights)}")
        for i, (layer, w) in enumerate(zip(self.layers, weights)):
            expected = weight_shapes(layer)
            if expected is None:
                if w is not None:
                    raise ShapeError(f"layer {i} ({type(layer).__name__}) takes no weights")
                continue
            if w is None or tuple(w[0].shape) != expected[0] or tuple(w[1].shape) != expected[1]:
                got = None if w is None else (w[0].shape, w[1].shape)
                raise ShapeError(f"layer {i}: weight shapes {got} != {expected}")
        self.weights = weights

    def with_weights(self, weights) -> "ModelSpec":
        return ModelSpec(self.input_shape, self.layers, weights)

    def tensors(self) -> list[np.ndarray]:
        """Flat list of weight tensors: kernel, bias for each parametric layer."""
        return [t for w in self.weights if w is not None for t in w]

    def architecture(self) -> dict:
        return {"input_shape": list(self.input_shape),
                "layers": [{"type": _NAMES[type(l)], **asdict(l)} for l in self.layers]}

    @classmethod
    def from_architecture(cls, arch: dict) -> "ModelSpec":
        layers = []
        for i, entry in enumerate(arch["layers"]):
            entry = dict(entry)
            kind = entry.pop("type", None)
            if kind not in _KINDS:
                raise ValueError(f"layer {i}: unknown layer type {kind!r}")
            layers.append(_KINDS[kind](**entry))
        return cls(tuple(arch["input_shape"]), layers)


def load_architecture(path) -> ModelSpec:
    return ModelSpec.from_architecture(json.loads(Path(path).read_text()))


def reference_architecture() -> ModelSpec:
    """Default 28x28x1 -> 24-class architecture (171,032 parameters)."""
    from importlib import resources
    text = resources.files("microquant").joinpath("ref-28x28.model.json").read_text()
    return ModelSpec.from_architecture(json.loads(text))


def weight_shapes(layer: LayerSpec):
    if isinstance(layer, Conv2D):
        k = layer.kernel
        return (k, k, layer.in_channels, layer.out_channels), (layer.out_channels,)
    if isinstance(layer, Dense):
        return (layer.in_features, layer.out_features), (layer.out_features,)
    return None


def _same_pads(size: int, k: int, stride: int) -> tuple[int, int]:
    out = math.ceil(size / stride)
    total = max((out - 1) * stride + k - size, 0)
    return total // 2, total - total // 2


def infer_shapes(spec: ModelSpec) -> list[tuple[int, ...]]:
    """Output shape of each layer (without the batch dimension)."""
    shape = tuple(spec.input_shape)
    if len(shape) != 3 or min(shape) < 1:
        raise ShapeError(f"input_shape must be [h, w, c] with positive dims, got {shape}")
    shapes = []
    for i, layer in enumerate(spec.layers):
        if isinstance(layer, Conv2D):
            if len(shape) != 3:
                raise ShapeError(f"layer {i}: Conv2D needs a 3-D input, got {shape}")
            h, w, c = shape
            if c != layer.in_channels:
                raise ShapeError(f"layer {i}: Conv2D expects {layer.in_channels} channels, got {c}")
            k, s = layer.kernel, layer.stride
            if layer.padding == "same":
                h, w = math.ceil(h / s), math.ceil(w / s)
            else:
                if h < k or w < k:
                    raise ShapeError(f"layer {i}: kernel {k} larger than input {shape}")
                h, w = (h - k) // s + 1, (w - k) // s + 1
            shape = (h, w, layer.out_channels)
        elif isinstance(layer, MaxPool2D):
            if len(shape) != 3:
                raise ShapeError(f"layer {i}: MaxPool2D needs a 3-D input, got {shape}")
            h, w, c = shape
            p, s = layer.pool, layer.stride
            if h < p or w < p:
                raise ShapeError(f"layer {i}: pool {p} larger than input {shape}")
            shape = ((h - p) // s + 1, (w - p) // s + 1, c)
        elif isinstance(layer, Flatten):
            shape = (int(np.prod(shape)),)
        elif isinstance(layer, Dense):
            if len(shape) != 1 or shape[0] != layer.in_features:
                raise ShapeError(f"layer {i}: Dense expects [{layer.in_features}], got {list(shape)}")
            shape = (layer.out_features,)
        else:
            raise TypeError(f"layer {i}: unsupported layer {layer!r}")
        shapes.append(shape)
    return shapes


def param_count(spec: ModelSpec) -> int:
    total = 0
    for layer in spec.layers:
        shapes = weight_shapes(layer)
        if shapes:
            total += sum(int(np.prod(s)) for s in shapes)
    return total


def init_weights(spec: ModelSpec, seed: int = 0, dtype=np.float32) -> ModelSpec:
    """He-uniform kernels, zero biases."""
    rng = np.random.default_rng(seed)
    weights = []
    for layer in spec.layers:
        shapes = weight_shapes(layer)
        if shapes is None:
            weights.append(None)
            continue
        kshape, bshape = shapes
        fan_in = int(np.prod(kshape[:-1]))
        limit = math.sqrt(6.0 / fan_in)
        kernel = rng.uniform(-limit, limit, size=kshape).astype(dtype)
        weights.append((kernel, np.zeros(bshape, dtype=dtype)))
    return spec.with_weights(weights)


# --- primitives -------------------------------------------------------------

def pad_same(x: np.ndarray, k: int, stride: int, value=0) -> np.ndarray:
    """Pad NHWC spatially for 'same' output; the odd pixel goes bottom/right."""
    top, bottom = _same_pads(x.shape[1], k, stride)
    left, right = _same_pads(x.shape[2], k, stride)
    return np.pad(x, ((0, 0), (top, bottom), (left, right), (0, 0)), constant_values=value)


def im2col(x: np.ndarray, k: int, stride: int) -> np.ndarray:
    """NHWC -> [N, oh, ow, k*k*C] patches, ordered (ky, kx, c)."""
    n, h, w, c = x.shape
    oh, ow = (h - k) // stride + 1, (w - k) // stride + 1
    sn, sh, sw, sc = x.strides
    view = np.lib.stride_tricks.as_strided(
        x, (n, oh, ow, k, k, c), (sn, sh * stride, sw * stride, sh, sw, sc), writeable=False)
    return view.reshape(n, oh, ow, k * k * c)


def conv2d(x, kernel, bias, stride: int = 1, padding: str = "same") -> np.ndarray:
    """Cross-correlation over NHWC (or HWC) input plus bias."""
    single = x.ndim == 3
    if single:
        x = x[None]
    k = kernel.shape[0]
    if x.shape[-1] != kernel.shape[2]:
        raise ShapeError(f"input has {x.shape[-1]} channels, kernel expects {kernel.shape[2]}")
    if padding == "same":
        x = pad_same(x, k, stride)
    cols = im2col(x, k, stride)
    out = cols @ kernel.reshape(-1, kernel.shape[3]) + bias
    return out[0] if single else out


def maxpool2d(x: np.ndarray, pool: int = 2, stride: int = 2) -> np.ndarray:
    single = x.ndim == 3
    if single:
        x = x[None]
    n, h, w, c = x.shape
    oh, ow = (h - pool) // stride + 1, (w - pool) // stride + 1
    sn, sh, sw, sc = x.strides
    view = np.lib.stride_tricks.as_strided(
        x, (n, oh, ow, pool, pool, c), (sn, sh * stride, sw * stride, sh, sw, sc), writeable=False)
    out = view.max(axis=(3, 4))
    return out[0] if single else out


def relu(x):
    return np.maximum(x, 0)


def softmax(v, axis: int = -1):
    v = np.asarray(v)
    e = np.exp(v - v.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def apply_layer(layer: LayerSpec, w, x: np.ndarray, *, pre_activation: bool = False) -> np.ndarray:
    """Run one layer on a batch. With ``pre_activation`` the activation is skipped."""
    if isinstance(layer, Conv2D):
        y = conv2d(x, w[0], w[1], layer.stride, layer.padding)
        return y if pre_activation or layer.activation == "none" else relu(y)
    if isinstance(layer, MaxPool2D):
        return maxpool2d(x, layer.pool, layer.stride)
    if isinstance(layer, Flatten):
        return x.reshape(x.shape[0], -1)
    y = x @ w[0] + w[1]
    if pre_activation or layer.activation == "none":
        return y
    return relu(y) if layer.activation == "relu" else softmax(y)


def forward(spec: ModelSpec, x, capture: bool = False):
    """Float forward pass.

    ``x`` is one sample [h, w, c] or a batch [n, h, w, c]. With ``capture``
    the per-layer outputs are returned too; for a softmax layer the captured
    value is its logits, which is what int8 calibration needs.
    """
    if not spec.weights:
        raise ValueError("model has no weights attached")
    x = np.asarray(x)
    if not np.issubdtype(x.dtype, np.floating):
        x = x.astype(np.float32)
    single = x.ndim == 3
    if single:
        x = x[None]
    if tuple(x.shape[1:]) != spec.input_shape:
        raise ShapeError(f"input shape {tuple(x.shape[1:])} != model input {spec.input_shape}")
    acts = []
    for layer, w in zip(spec.layers, spec.weights):
        if isinstance(layer, Dense) and layer.activation == "softmax":
            logits = apply_layer(layer, w, x, pre_activation=True)
            acts.append(logits)
            x = softmax(logits)
        else:
            x = apply_layer(layer, w, x)
            acts.append(x)
    if single:
        x = x[0]
        acts = [a[0] for a in acts]
    return (x, acts) if capture else x
