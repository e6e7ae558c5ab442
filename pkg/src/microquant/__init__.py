"""Tiny CNN training, int8 post-training quantization and integer-only inference."""

from .imaging import AugmentParams, Image, InterpMethod
from .netgraph import ModelSpec, forward, param_count
from .quantizer import QuantizedModel, calibrate, infer_quantized, quantize_model
from .tensor import QuantParams, QuantTensor, Range

__all__ = [
    "AugmentParams", "Image", "InterpMethod", "ModelSpec", "QuantParams", "QuantTensor",
    "QuantizedModel", "Range", "calibrate", "forward", "infer_quantized", "param_count",
    "quantize_model",
]
__version__ = "0.1.0"
