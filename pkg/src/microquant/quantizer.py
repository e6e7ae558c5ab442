"""Post-training full-integer quantization and integer-only inference.

The float model is calibrated on a representative set, converted to int8
weights / int32 biases / per-tensor activation parameters, and executed with
integer kernels. Only the model boundary is float: inputs are quantized on
entry, final logits are dequantized and passed through a float softmax.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .netgraph import (Conv2D, Dense, Flatten, LayerSpec, MaxPool2D, ModelSpec,
                       ShapeError, forward, im2col, maxpool2d, pad_same, softmax)
from .tensor import (INT32_MAX, INT32_MIN, QuantParams, QuantTensor, Range, _decompose,
                     params_from_range, quantize, requantize, round_half_away)

log = logging.getLogger(__name__)

DEFAULT_REPRESENTATIVE_SIZE = 128


@dataclass
class CalibrationProfile:
    input: Range
    activations: list[Range]
    weights: list[tuple[Range, Range] | None]
    sample_count: int

    def check(self, spec: ModelSpec) -> None:
        if len(self.activations) != len(spec.layers) or len(self.weights) != len(spec.layers):
            raise ValueError("calibration profile does not cover every layer")
        for i, (layer, w) in enumerate(zip(spec.layers, self.weights)):
            if isinstance(layer, (Conv2D, Dense)) and w is None:
                raise ValueError(f"layer {i}: missing weight range")
            if self.activations[i] is None:
                raise ValueError(f"layer {i}: missing activation range")


def calibrate(spec: ModelSpec, representative, batch_size: int = 64) -> CalibrationProfile:
    """Record min/max of the input, every layer output and every weight tensor."""
    reps = np.asarray(representative, dtype=np.float32)
    if reps.ndim == 3:
        reps = reps[None]
    if len(reps) == 0:
        raise ValueError("representative dataset is empty")
    if tuple(reps.shape[1:]) != spec.input_shape:
        raise ShapeError(f"representative shape {reps.shape[1:]} != model input {spec.input_shape}")
    input_range = Range.of(reps)
    acts: list[Range] | None = None
    for start in range(0, len(reps), batch_size):
        _, captured = forward(spec, reps[start:start + batch_size], capture=True)
        ranges = [Range.of(a) for a in captured]
        acts = ranges if acts is None else [a.union(b) for a, b in zip(acts, ranges)]
    weights = [None if w is None else (Range.of(w[0]), Range.of(w[1])) for w in spec.weights]
    return CalibrationProfile(input_range, acts or [], weights, len(reps))


@dataclass
class QuantLayer:
    """One layer of the integer graph.

    Parametric layers carry int8 weights, int32 biases and the fixed-point
    requantization pair; pooling and flatten pass parameters through.
    """

    spec: LayerSpec
    in_params: QuantParams
    out_params: QuantParams
    weight: QuantTensor | None = None
    bias: np.ndarray | None = None
    bias_scale: float | None = None
    multiplier: int = 0
    shift: int = 0

    @property
    def relu(self) -> bool:
        return getattr(self.spec, "activation", "none") == "relu"


@dataclass
class QuantizedModel:
    input_shape: tuple[int, int, int]
    input_params: QuantParams
    layers: list[QuantLayer] = field(default_factory=list)

    @property
    def output_params(self) -> QuantParams:
        return self.layers[-1].out_params if self.layers else self.input_params

    def architecture(self) -> ModelSpec:
        return ModelSpec(self.input_shape, [l.spec for l in self.layers])

    def param_count(self) -> int:
        return sum(l.weight.data.size + l.bias.size for l in self.layers if l.weight is not None)


def _bias_to_int32(bias: np.ndarray, bias_scale: float, layer_index: int) -> np.ndarray:
    q = round_half_away(np.asarray(bias, dtype=np.float64) / bias_scale)
    q = np.atleast_1d(q)
    if (q > INT32_MAX).any() or (q < INT32_MIN).any():
        log.warning("layer %d: bias saturated at int32 bounds", layer_index)
    return np.clip(q, INT32_MIN, INT32_MAX).astype(np.int32)


def quantize_model(spec: ModelSpec, profile: CalibrationProfile) -> QuantizedModel:
    profile.check(spec)
    p_in = params_from_range(profile.input)
    qm = QuantizedModel(spec.input_shape, p_in)
    for i, (layer, w) in enumerate(zip(spec.layers, spec.weights)):
        if isinstance(layer, (Conv2D, Dense)):
            w_params = params_from_range(profile.weights[i][0], symmetric=True)
            p_out = params_from_range(profile.activations[i])
            bias_scale = float(np.float32(p_in.scale) * np.float32(w_params.scale))
            multiplier, shift = _decompose(bias_scale / p_out.scale)
            qm.layers.append(QuantLayer(
                spec=layer, in_params=p_in, out_params=p_out,
                weight=QuantTensor(quantize(w[0], w_params), w_params),
                bias=_bias_to_int32(w[1], bias_scale, i), bias_scale=bias_scale,
                multiplier=multiplier, shift=shift))
        else:
            p_out = p_in
            qm.layers.append(QuantLayer(spec=layer, in_params=p_in, out_params=p_out))
        p_in = p_out
    return qm


# --- integer kernels ------------------------------------------------------------------------

def _accumulate(lhs: np.ndarray, rhs: np.ndarray, bias: np.ndarray) -> np.ndarray:
    acc = np.clip(lhs @ rhs, INT32_MIN, INT32_MAX) + bias.astype(np.int64)
    return np.clip(acc, INT32_MIN, INT32_MAX)


def _finish(acc, multiplier, shift, out_params: QuantParams, relu: bool) -> QuantTensor:
    out = requantize(acc, multiplier, shift, out_params.zero_point)
    if relu:
        out = np.maximum(out, np.int8(out_params.zero_point))
    return QuantTensor(out.astype(np.int8), out_params)


def conv2d_int8(x: QuantTensor, weights: QuantTensor, bias, requant: tuple[int, int],
                out_params: QuantParams, stride: int = 1, padding: str = "same",
                relu: bool = False) -> QuantTensor:
    """int8 convolution: int32 accumulation of (q_in - zp_in) * q_w, then requantize."""
    data = x.data
    single = data.ndim == 3
    if single:
        data = data[None]
    k = weights.shape[0]
    if data.shape[-1] != weights.shape[2]:
        raise ShapeError(f"input has {data.shape[-1]} channels, kernel expects {weights.shape[2]}")
    centered = data.astype(np.int64) - x.params.zero_point
    if padding == "same":
        centered = pad_same(centered, k, stride)  # zero here is the real zero
    cols = im2col(np.ascontiguousarray(centered), k, stride)
    acc = _accumulate(cols, weights.data.reshape(-1, weights.shape[3]).astype(np.int64),
                      np.asarray(bias))
    out = _finish(acc, *requant, out_params, relu)
    return QuantTensor(out.data[0], out_params) if single else out


def dense_int8(x: QuantTensor, weights: QuantTensor, bias, requant: tuple[int, int],
               out_params: QuantParams, relu: bool = False) -> QuantTensor:
    centered = x.data.astype(np.int64) - x.params.zero_point
    acc = _accumulate(centered, weights.data.astype(np.int64), np.asarray(bias))
    return _finish(acc, *requant, out_params, relu)


def maxpool_int8(x: QuantTensor, pool: int = 2, stride: int = 2) -> QuantTensor:
    """Window max over raw int8 codes; valid because dequantization is monotone."""
    return QuantTensor(maxpool2d(x.data, pool, stride), x.params)


def run_layer(layer: QuantLayer, x: QuantTensor) -> QuantTensor:
    spec = layer.spec
    if isinstance(spec, Conv2D):
        return conv2d_int8(x, layer.weight, layer.bias, (layer.multiplier, layer.shift),
                           layer.out_params, spec.stride, spec.padding, layer.relu)
    if isinstance(spec, Dense):
        return dense_int8(x, layer.weight, layer.bias, (layer.multiplier, layer.shift),
                          layer.out_params, layer.relu)
    if isinstance(spec, MaxPool2D):
        return maxpool_int8(x, spec.pool, spec.stride)
    if isinstance(spec, Flatten):
        return QuantTensor(x.data.reshape(x.data.shape[0], -1), x.params)
    raise TypeError(f"unsupported layer {spec!r}")


def integer_trace(qm: QuantizedModel, x) -> list[tuple[str, np.dtype]]:
    """Run the integer core and list (layer kind, output dtype) per stage.

    Used to audit that nothing between input quantization and the final
    dequantization produces floating-point data.
    """
    q = _quantize_input(qm, x)
    trace = [("input", q.data.dtype)]
    for layer in qm.layers:
        q = run_layer(layer, q)
        trace.append((type(layer.spec).__name__, q.data.dtype))
    return trace


def _quantize_input(qm: QuantizedModel, x) -> QuantTensor:
    x = np.asarray(x, dtype=np.float32)
    if x.ndim == 3:
        x = x[None]
    if tuple(x.shape[1:]) != qm.input_shape:
        raise ShapeError(f"input shape {tuple(x.shape[1:])} != model input {qm.input_shape}")
    return QuantTensor(quantize(x, qm.input_params), qm.input_params)


def infer_logits(qm: QuantizedModel, x) -> np.ndarray:
    """Integer pipeline with float32 in and dequantized float32 logits out."""
    q = _quantize_input(qm, x)
    for layer in qm.layers:
        q = run_layer(layer, q)
    return q.dequantize()


def infer_quantized(qm: QuantizedModel, x) -> np.ndarray:
    """Class probabilities for one sample [h, w, c] or a batch [n, h, w, c]."""
    single = np.ndim(x) == 3
    logits = infer_logits(qm, x)
    last = qm.layers[-1].spec if qm.layers else None
    if isinstance(last, Dense) and last.activation == "softmax":
        out = softmax(logits.astype(np.float64)).astype(np.float32)
    else:
        out = logits
    return out[0] if single else out


def quantize_from_dataset(spec: ModelSpec, representative) -> QuantizedModel:
    return quantize_model(spec, calibrate(spec, representative))
