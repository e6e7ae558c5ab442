"""TQM1 binary model format.

Layout (all integers little-endian)::

    "TQM1" | u16 version | u8 quantized | u8 reserved | u32 file length
    u32 metadata length | metadata JSON (utf-8) | pad to 4
    u32 tensor count
    per tensor: u8 dtype | u8 rank | u32 dims[rank]
                [f32 scale | i32 zero_point]   (quantized files only)
                payload | pad to 4
    u32 CRC32 of everything before it

The metadata JSON holds the architecture and, for quantized models, the
activation parameters and fixed-point requantization pairs.
"""
from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .netgraph import Conv2D, Dense, ModelSpec
from .quantizer import QuantizedModel, QuantLayer
from .tensor import QuantParams, QuantTensor

MAGIC = b"TQM1"
VERSION = 1
HEADER = struct.Struct("<4sHBBI")
DTYPES = {0: np.dtype("<f4"), 1: np.dtype("i1"), 2: np.dtype("<i4")}
DTYPE_CODES = {v: k for k, v in DTYPES.items()}


class ModelFormatError(ValueError):
    """Base class for unreadable model files."""


class BadMagicError(ModelFormatError):
    pass


class VersionMismatchError(ModelFormatError):
    pass


class TruncatedModelError(ModelFormatError):
    pass


class ChecksumError(ModelFormatError):
    pass


def _pad4(n: int) -> int:
    return (-n) % 4


def _params_json(p: QuantParams) -> dict:
    return {"scale": p.scale, "zero_point": p.zero_point}


def _params_from_json(d: dict) -> QuantParams:
    return QuantParams(d["scale"], d["zero_point"])


def _collect(model) -> tuple[bool, dict, list[tuple[np.ndarray, QuantParams | None]]]:
    if isinstance(model, QuantizedModel):
        meta = model.architecture().architecture()
        meta["input_params"] = _params_json(model.input_params)
        meta["quant"] = []
        tensors = []
        for layer in model.layers:
            entry = {"in": _params_json(layer.in_params), "out": _params_json(layer.out_params)}
            if layer.weight is not None:
                entry.update(multiplier=layer.multiplier, shift=layer.shift,
                             bias_scale=layer.bias_scale)
                tensors.append((layer.weight.data, layer.weight.params))
                tensors.append((layer.bias, QuantParams(layer.bias_scale, 0)))
            meta["quant"].append(entry)
        return True, meta, tensors
    if isinstance(model, ModelSpec):
        return False, model.architecture(), [(t, None) for t in model.tensors()]
    raise TypeError(f"cannot serialize {type(model).__name__}")


def _tensor_record(arr: np.ndarray, params: QuantParams | None, quantized: bool) -> bytes:
    dt = arr.dtype.newbyteorder("<") if arr.dtype.itemsize > 1 else arr.dtype
    code = DTYPE_CODES.get(np.dtype(dt))
    if code is None:
        raise TypeError(f"unsupported tensor dtype {arr.dtype}")
    parts = [struct.pack("<BB", code, arr.ndim), struct.pack(f"<{arr.ndim}I", *arr.shape)]
    if quantized:
        p = params if params is not None else QuantParams(1.0, 0)
        parts.append(struct.pack("<fi", p.scale, p.zero_point))
    payload = np.ascontiguousarray(arr, dtype=dt).tobytes()
    head = b"".join(parts)
    return head + payload + b"\0" * _pad4(len(head) + len(payload))


def _sections(model) -> tuple[bool, bytes, bytes]:
    quantized, meta, tensors = _collect(model)
    blob = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    meta_section = struct.pack("<I", len(blob)) + blob + b"\0" * _pad4(len(blob))
    tensor_section = struct.pack("<I", len(tensors)) + b"".join(
        _tensor_record(arr, p, quantized) for arr, p in tensors)
    return quantized, meta_section, tensor_section


def dumps(model) -> bytes:
    quantized, meta_section, tensor_section = _sections(model)
    total = HEADER.size + len(meta_section) + len(tensor_section) + 4
    body = HEADER.pack(MAGIC, VERSION, int(quantized), 0, total) + meta_section + tensor_section
    return body + struct.pack("<I", zlib.crc32(body))


def size_breakdown(model) -> dict[str, int]:
    """Byte accounting of the serialized form; the values sum to the file size."""
    _, meta_section, tensor_section = _sections(model)
    return {"header": HEADER.size, "metadata": len(meta_section),
            "tensors": len(tensor_section), "checksum": 4}


def save_model(path, model) -> int:
    data = dumps(model)
    Path(path).write_bytes(data)
    return len(data)


class _Reader:
    def __init__(self, data: bytes, pos: int, end: int):
        self.data, self.pos, self.end = data, pos, end

    def take(self, n: int) -> bytes:
        if self.pos + n > self.end:
            raise ModelFormatError("record runs past the end of the model body")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def loads(data: bytes):
    """Parse a TQM1 image into a ModelSpec or QuantizedModel."""
    if len(data) < 4:
        raise TruncatedModelError(f"file is {len(data)} bytes, shorter than the magic")
    if data[:4] != MAGIC:
        raise BadMagicError(f"bad magic {data[:4]!r}, expected {MAGIC!r}")
    if len(data) < HEADER.size:
        raise TruncatedModelError("file ends inside the header")
    _, version, quantized, _, total = HEADER.unpack_from(data)
    if version != VERSION:
        raise VersionMismatchError(f"unsupported format version {version} (expected {VERSION})")
    if len(data) < total:
        raise TruncatedModelError(f"file is {len(data)} bytes, header declares {total}")
    if len(data) > total:
        raise ModelFormatError(f"{len(data) - total} trailing bytes after the model")
    (stored_crc,) = struct.unpack_from("<I", data, total - 4)
    if zlib.crc32(data[:total - 4]) != stored_crc:
        raise ChecksumError("CRC32 mismatch")

    r = _Reader(data, HEADER.size, total - 4)
    try:
        (meta_len,) = r.unpack("<I")
        meta = json.loads(r.take(meta_len).decode("utf-8"))
        r.take(_pad4(meta_len))
        (count,) = r.unpack("<I")
        tensors = []
        for _ in range(count):
            code, rank = r.unpack("<BB")
            if code not in DTYPES:
                raise ModelFormatError(f"unknown dtype code {code}")
            dims = r.unpack(f"<{rank}I")
            params = QuantParams(*r.unpack("<fi")) if quantized else None
            dt = DTYPES[code]
            nbytes = int(np.prod(dims, dtype=np.int64)) * dt.itemsize
            arr = np.frombuffer(r.take(nbytes), dtype=dt).reshape(dims).astype(dt.newbyteorder("="))
            r.take(_pad4(struct.calcsize(f"<BB{rank}I") + (8 if quantized else 0) + nbytes))
            tensors.append((arr, params))
        if r.pos != r.end:
            raise ModelFormatError("unexpected bytes before the checksum")
        spec = ModelSpec.from_architecture(meta)
        return _build_quantized(spec, meta, tensors) if quantized else _build_float(spec, tensors)
    except (KeyError, TypeError, json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ModelFormatError(f"malformed model metadata: {exc}") from exc


def _build_float(spec: ModelSpec, tensors) -> ModelSpec:
    it = iter(arr for arr, _ in tensors)
    weights = [(next(it), next(it)) if isinstance(l, (Conv2D, Dense)) else None
               for l in spec.layers]
    return spec.with_weights(weights)


def _build_quantized(spec: ModelSpec, meta: dict, tensors) -> QuantizedModel:
    qm = QuantizedModel(spec.input_shape, _params_from_json(meta["input_params"]))
    it = iter(tensors)
    for layer, entry in zip(spec.layers, meta["quant"]):
        ql = QuantLayer(layer, _params_from_json(entry["in"]), _params_from_json(entry["out"]))
        if isinstance(layer, (Conv2D, Dense)):
            w, wp = next(it)
            b, _ = next(it)
            ql.weight = QuantTensor(w, wp)
            ql.bias = b
            ql.bias_scale = entry["bias_scale"]
            ql.multiplier, ql.shift = entry["multiplier"], entry["shift"]
        qm.layers.append(ql)
    return qm


def load_model(path):
    return loads(Path(path).read_bytes())
