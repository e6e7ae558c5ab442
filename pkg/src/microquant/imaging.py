"""8-bit grayscale images: resize kernels, augmentation, PGM I/O."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .tensor import round_half_away


class InterpMethod(enum.Enum):
    NEAREST = "nearest"
    BILINEAR = "bilinear"
    AREA = "area"
    BICUBIC = "bicubic"
    LANCZOS4 = "lanczos4"

    @classmethod
    def parse(cls, name: "str | InterpMethod") -> "InterpMethod":
        if isinstance(name, cls):
            return name
        return cls(str(name).lower())


@dataclass(frozen=True, eq=False)
class Image:
    """Grayscale raster; ``pixels`` is a (height, width) uint8 array."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.ascontiguousarray(self.pixels)
        if px.ndim != 2 or px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError(f"image pixels must be a non-empty 2-D array, got {px.shape}")
        if px.dtype != np.uint8:
            raise TypeError(f"image pixels must be uint8, got {px.dtype}")
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @classmethod
    def from_flat(cls, width: int, height: int, values) -> "Image":
        values = np.asarray(values)
        if values.size != width * height:
            raise ValueError(f"expected {width * height} pixels, got {values.size}")
        return cls(values.astype(np.uint8).reshape(height, width))

    def __eq__(self, other):
        if not isinstance(other, Image):
            return NotImplemented
        return np.array_equal(self.pixels, other.pixels)

    def __hash__(self):
        return hash((self.pixels.shape, self.pixels.tobytes()))

    def __repr__(self):
        return f"Image({self.width}x{self.height})"


@dataclass(frozen=True)
class AugmentParams:
    rotation_degrees_max: float = 20.0
    crop_size: int = 20
    target_size: int = 28
    contrast_jitter: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.crop_size <= 0:
            raise ValueError("crop_size must be positive")
        if self.rotation_degrees_max < 0:
            raise ValueError("rotation_degrees_max must be >= 0")
        if self.target_size <= 0:
            raise ValueError("target_size must be positive")


def _to_u8(values: np.ndarray) -> np.ndarray:
    return np.clip(round_half_away(values), 0, 255).astype(np.uint8)


# --- resize -----------------------------------------------------------------

def _cubic(x: np.ndarray, a: float = -0.75) -> np.ndarray:
    x = np.abs(x)
    near = ((a + 2) * x - (a + 3)) * x * x + 1
    far = ((a * x - 5 * a) * x + 8 * a) * x - 4 * a
    return np.where(x <= 1, near, np.where(x < 2, far, 0.0))


def _lanczos(x: np.ndarray, window: int = 4) -> np.ndarray:
    return np.where(np.abs(x) < window, np.sinc(x) * np.sinc(x / window), 0.0)


def _tap_matrix(src: int, dst: int, method: InterpMethod) -> np.ndarray:
    """(dst, src) weights for one axis under the half-pixel-center mapping."""
    scale = src / dst
    centers = (np.arange(dst) + 0.5) * scale - 0.5
    w = np.zeros((dst, src))
    rows = np.arange(dst)

    if method is InterpMethod.NEAREST:
        idx = np.clip(round_half_away(centers).astype(int), 0, src - 1)
        w[rows, idx] = 1.0
        return w

    if method is InterpMethod.AREA and src >= dst:
        return _area_overlap(src, dst) / src

    base = np.floor(centers).astype(int)
    frac = centers - base
    if method in (InterpMethod.BILINEAR, InterpMethod.AREA):
        offsets = np.arange(0, 2)
        weights = np.stack([1.0 - frac, frac], axis=1)
    elif method is InterpMethod.BICUBIC:
        offsets = np.arange(-1, 3)
        weights = _cubic(frac[:, None] - offsets[None, :])
    else:
        offsets = np.arange(-3, 5)
        weights = _lanczos(frac[:, None] - offsets[None, :])
        weights /= weights.sum(axis=1, keepdims=True)
    taps = np.clip(base[:, None] + offsets[None, :], 0, src - 1)
    np.add.at(w, (np.repeat(rows, len(offsets)), taps.ravel()), weights.ravel())
    return w


def _area_overlap(src: int, dst: int) -> np.ndarray:
    """Integer coverage of each source pixel by each destination footprint.

    Coordinates are multiplied by ``dst`` so that every boundary is an integer:
    destination pixel d spans [d*src, (d+1)*src), source pixel s spans
    [s*dst, (s+1)*dst). Each row sums to ``src``.
    """
    d = np.arange(dst)[:, None]
    s = np.arange(src)[None, :]
    lo = np.maximum(d * src, s * dst)
    hi = np.minimum((d + 1) * src, (s + 1) * dst)
    return np.maximum(hi - lo, 0).astype(np.int64)


def resize(img: Image, out_w: int, out_h: int, method="bilinear") -> Image:
    """Resample ``img`` to ``out_w`` x ``out_h`` with one of the five kernels."""
    if out_w < 1 or out_h < 1:
        raise ValueError(f"output size must be positive, got {out_w}x{out_h}")
    method = InterpMethod.parse(method)
    sh, sw = img.pixels.shape
    if method is InterpMethod.AREA and sw >= out_w and sh >= out_h:
        # exact rational box mean, rounded half away from zero
        ov_y = _area_overlap(sh, out_h)
        ov_x = _area_overlap(sw, out_w)
        num = ov_y @ img.pixels.astype(np.int64) @ ov_x.T
        den = sh * sw
        return Image(np.clip((2 * num + den) // (2 * den), 0, 255).astype(np.uint8))
    wy = _tap_matrix(sh, out_h, method)
    wx = _tap_matrix(sw, out_w, method)
    return Image(_to_u8(wy @ img.pixels.astype(np.float64) @ wx.T))


# --- geometric / photometric ops ----------------------------------------------

def rotate(img: Image, degrees: float) -> Image:
    """Rotate counter-clockwise about the image center; uncovered pixels are black."""
    if not math.isfinite(degrees):
        raise ValueError("rotation angle must be finite")
    h, w = img.pixels.shape
    theta = math.radians(degrees)
    c, s = math.cos(theta), math.sin(theta)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    dx, dy = xx - cx, yy - cy
    # inverse map: destination -> source (y axis points down)
    sx = c * dx - s * dy + cx
    sy = s * dx + c * dy + cy

    padded = np.zeros((h + 2, w + 2))
    padded[1:-1, 1:-1] = img.pixels
    x0 = np.floor(sx)
    y0 = np.floor(sy)
    fx, fy = sx - x0, sy - y0
    inside = (sx > -1) & (sx < w) & (sy > -1) & (sy < h)
    x0 = np.clip(x0.astype(int), -1, w - 1) + 1
    y0 = np.clip(y0.astype(int), -1, h - 1) + 1
    x1, y1 = x0 + 1, y0 + 1
    val = (padded[y0, x0] * (1 - fx) * (1 - fy) + padded[y0, x1] * fx * (1 - fy)
           + padded[y1, x0] * (1 - fx) * fy + padded[y1, x1] * fx * fy)
    return Image(_to_u8(np.where(inside, val, 0.0)))


def crop(img: Image, x: int, y: int, w: int, h: int) -> Image:
    if w < 1 or h < 1 or x < 0 or y < 0 or x + w > img.width or y + h > img.height:
        raise ValueError(
            f"crop ({x},{y},{w},{h}) outside {img.width}x{img.height} image")
    return Image(img.pixels[y:y + h, x:x + w].copy())


def adjust_contrast(img: Image, factor: float) -> Image:
    if not factor > 0:
        raise ValueError("contrast factor must be > 0")
    return Image(_to_u8(128.0 + factor * (img.pixels.astype(np.float64) - 128.0)))


def augment_standard(img: Image, p: AugmentParams) -> Image:
    """Random rotation, random crop, bilinear resize, contrast jitter."""
    if img.width < p.crop_size or img.height < p.crop_size:
        raise ValueError(
            f"image {img.width}x{img.height} smaller than crop size {p.crop_size}")
    rng = np.random.default_rng(p.seed)
    angle = rng.uniform(-p.rotation_degrees_max, p.rotation_degrees_max)
    x = int(rng.integers(0, img.width - p.crop_size + 1))
    y = int(rng.integers(0, img.height - p.crop_size + 1))
    factor = rng.uniform(1.0 - p.contrast_jitter, 1.0 + p.contrast_jitter)

    out = rotate(img, angle)
    out = crop(out, x, y, p.crop_size, p.crop_size)
    out = resize(out, p.target_size, p.target_size, InterpMethod.BILINEAR)
    return adjust_contrast(out, factor)


def augment_interpolation(img: Image, target: int) -> list[Image]:
    """One resized copy per interpolation method, in enum order."""
    return [resize(img, target, target, m) for m in InterpMethod]


def normalize(img: Image) -> np.ndarray:
    """Image -> float32 tensor of shape [h, w, 1] in [0, 1]."""
    return (img.pixels.astype(np.float32) / np.float32(255.0))[:, :, None]


def to_gray(rgb: np.ndarray) -> np.ndarray:
    """BT.601 luma of an (h, w, 3) uint8 array."""
    rgb = rgb.astype(np.float64)
    return _to_u8(0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2])


# --- PGM / PPM ----------------------------------------------------------------

def _pnm_tokens(data: bytes, count: int) -> tuple[list[int], int]:
    tokens: list[int] = []
    pos = 2
    while len(tokens) < count:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos] not in b"\r\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError("truncated PNM header")
        tokens.append(int(data[start:pos]))
    return tokens, pos + 1  # single whitespace byte before raster


def decode_pnm(data: bytes) -> Image:
    """Decode binary PGM (P5) or PPM (P6, converted to gray); maxval 255 only."""
    magic = data[:2]
    if magic not in (b"P5", b"P6"):
        raise ValueError(f"not a binary PGM/PPM file (magic {magic!r})")
    (w, h, maxval), start = _pnm_tokens(data, 3)
    if maxval != 255:
        raise ValueError(f"unsupported maxval {maxval}")
    channels = 1 if magic == b"P5" else 3
    raster = np.frombuffer(data, dtype=np.uint8, count=w * h * channels, offset=start)
    if magic == b"P5":
        return Image(raster.reshape(h, w).copy())
    return Image(to_gray(raster.reshape(h, w, 3)))


def encode_pgm(img: Image) -> bytes:
    return f"P5\n{img.width} {img.height}\n255\n".encode("ascii") + img.pixels.tobytes()


def read_pgm(path) -> Image:
    return decode_pnm(Path(path).read_bytes())


def write_pgm(path, img: Image) -> None:
    Path(path).write_bytes(encode_pgm(img))
