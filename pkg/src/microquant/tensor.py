"""Affine int8 quantization primitives and fixed-point requantization.

Tensors are plain ``numpy.ndarray`` values (float32 for real data, int8/int32
for quantized data). Everything here is a pure function.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

INT8_MIN, INT8_MAX = -128, 127
INT32_MIN, INT32_MAX = -(2**31), 2**31 - 1
Q31_ONE = 1 << 31


def round_half_away(x):
    """Round to nearest, ties away from zero. Works on scalars and arrays."""
    x = np.asarray(x, dtype=np.float64)
    out = np.sign(x) * np.floor(np.abs(x) + 0.5)
    return out if out.ndim else float(out)


def as_tensor(data, shape=None) -> np.ndarray:
    """Validate and return a float32 tensor with 1 to 4 dimensions."""
    arr = np.asarray(data, dtype=np.float32)
    if shape is not None:
        arr = arr.reshape(shape)
    if not 1 <= arr.ndim <= 4:
        raise ValueError(f"tensor rank must be 1..4, got shape {arr.shape}")
    if any(d < 1 for d in arr.shape):
        raise ValueError(f"tensor dimensions must be >= 1, got {arr.shape}")
    return arr


@dataclass(frozen=True)
class QuantParams:
    scale: float
    zero_point: int = 0

    def __post_init__(self):
        scale = float(np.float32(self.scale))
        if not (math.isfinite(scale) and scale > 0):
            raise ValueError(f"scale must be finite and > 0, got {self.scale}")
        if not INT8_MIN <= int(self.zero_point) <= INT8_MAX:
            raise ValueError(f"zero_point {self.zero_point} outside int8 range")
        object.__setattr__(self, "scale", scale)
        object.__setattr__(self, "zero_point", int(self.zero_point))


@dataclass(frozen=True)
class Range:
    min: float
    max: float

    def __post_init__(self):
        if not (math.isfinite(self.min) and math.isfinite(self.max)):
            raise ValueError(f"range bounds must be finite, got ({self.min}, {self.max})")
        if self.min > self.max:
            raise ValueError(f"range min {self.min} > max {self.max}")

    @classmethod
    def of(cls, arr) -> "Range":
        arr = np.asarray(arr)
        return cls(float(arr.min()), float(arr.max()))

    def union(self, other: "Range") -> "Range":
        return Range(min(self.min, other.min), max(self.max, other.max))


@dataclass(frozen=True)
class QuantTensor:
    """int8 payload plus the affine parameters that give it meaning."""

    data: np.ndarray
    params: QuantParams

    def __post_init__(self):
        if self.data.dtype != np.int8:
            raise TypeError(f"QuantTensor data must be int8, got {self.data.dtype}")

    @property
    def shape(self):
        return self.data.shape

    def dequantize(self) -> np.ndarray:
        return dequantize(self.data, self.params)


def quantize(x, p: QuantParams) -> np.ndarray:
    """Vectorized ``quantize_value``; returns an int8 array."""
    q = round_half_away(np.asarray(x, dtype=np.float64) / p.scale) + p.zero_point
    return np.clip(q, INT8_MIN, INT8_MAX).astype(np.int8)


def dequantize(q, p: QuantParams) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    return (p.scale * (q - p.zero_point)).astype(np.float32)


def quantize_value(x: float, p: QuantParams) -> int:
    """Map a real value to int8 with saturation."""
    return int(quantize(x, p))


def dequantize_value(q: int, p: QuantParams) -> float:
    return float(dequantize(q, p))


def params_from_range(r: Range, symmetric: bool = False) -> QuantParams:
    """Derive int8 parameters from a calibrated range.

    Asymmetric mode spreads 255 steps over the range widened to include zero.
    Symmetric mode fixes the zero point at 0 and uses 127 steps per side.
    A degenerate range ``[v, v]`` gets scale 1.0 (``v == 0``) or ``|v|/127``.
    """
    lo, hi = float(r.min), float(r.max)
    if not (math.isfinite(lo) and math.isfinite(hi)):
        raise ValueError("range bounds must be finite")
    if lo == hi:
        return QuantParams(1.0 if lo == 0 else abs(lo) / 127.0, 0)
    if symmetric:
        return QuantParams(max(abs(lo), abs(hi)) / 127.0, 0)
    lo, hi = min(lo, 0.0), max(hi, 0.0)
    scale = float(np.float32((hi - lo) / 255.0))
    zp = int(round_half_away(-128.0 - lo / scale))
    return QuantParams(scale, int(np.clip(zp, INT8_MIN, INT8_MAX)))


def decompose_multiplier(real_m: float) -> tuple[int, int]:
    """Split ``0 < real_m < 1`` into a Q31 multiplier in [2^30, 2^31) and a right shift."""
    if not 0.0 < real_m < 1.0:
        raise ValueError(f"real multiplier must lie in (0, 1), got {real_m}")
    q, shift = _decompose(real_m)
    if shift < 0:
        # real_m within 2^-32 of 1 rounded up to exactly 1.0
        q, shift = Q31_ONE - 1, 0
    return q, shift


def _decompose(real_m: float) -> tuple[int, int]:
    # Also used for multipliers >= 1, which yield a negative (left) shift.
    mantissa, exponent = math.frexp(real_m)  # real_m = mantissa * 2**exponent, mantissa in [0.5, 1)
    q = int(round_half_away(mantissa * Q31_ONE))
    shift = -exponent
    if q == Q31_ONE:
        q //= 2
        shift -= 1
    return q, shift


def requantize(acc, multiplier: int, shift: int, out_zero_point: int):
    """Scale int32 accumulators to int8 using integer arithmetic only.

    Computes ``clamp(round(acc * multiplier * 2^-(31 + shift)) + zp)`` with
    ties away from zero and 64-bit intermediates. A negative shift is a left
    shift, used for real multipliers >= 1.
    """
    acc = np.asarray(acc, dtype=np.int64)
    scalar = acc.ndim == 0
    if shift < 0:
        acc = np.clip(acc << np.int64(-shift), INT32_MIN, INT32_MAX)
        shift = 0
    total = 31 + int(shift)
    if total > 62:
        # |acc * multiplier| < 2^62, so the scaled value is below one half.
        out = np.zeros_like(acc)
    else:
        prod = acc * np.int64(multiplier)
        half = np.int64(1) << np.int64(total - 1)
        mag = (np.abs(prod) + half) >> np.int64(total)
        out = np.where(prod < 0, -mag, mag)
    out = np.clip(out + out_zero_point, INT8_MIN, INT8_MAX).astype(np.int8)
    return int(out) if scalar else out
