"""Datasets: Sign-MNIST-style CSV, PGM directories, and a synthetic generator."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .imaging import Image, InterpMethod, read_pgm, resize

log = logging.getLogger(__name__)

CLASS_COUNT = 24
LETTERS = "ABCDEFGHIKLMNOPQRSTUVWXY"  # J and Z need motion
IMAGE_SIZE = 28
SOURCE_SIZE = 240
_ABSENT_CSV_LABEL = 9  # J


def csv_label_to_index(label: int) -> int:
    """Sign-MNIST labels 0..24 (9 unused) -> dense 0..23."""
    if not 0 <= label <= 24 or label == _ABSENT_CSV_LABEL:
        raise ValueError(f"label {label} out of range (0..24, 9 unused)")
    return label if label < _ABSENT_CSV_LABEL else label - 1


def index_to_csv_label(index: int) -> int:
    return index if index < _ABSENT_CSV_LABEL else index + 1


@dataclass
class Dataset:
    images: np.ndarray  # [n, h, w] uint8
    labels: np.ndarray  # [n] int64
    tags: list[str] = field(default_factory=list)
    class_count: int = CLASS_COUNT

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.uint8)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.size == 0:
            self.images = self.images.reshape(0, IMAGE_SIZE, IMAGE_SIZE)
        if self.images.ndim != 3 or len(self.images) != len(self.labels):
            raise ValueError("images must be [n, h, w] with one label each")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise ValueError(f"labels must lie in [0, {self.class_count})")
        if not self.tags:
            self.tags = [""] * len(self.labels)
        if len(self.tags) != len(self.labels):
            raise ValueError("one provenance tag per sample required")

    def __len__(self) -> int:
        return len(self.labels)

    def image(self, i: int) -> Image:
        return Image(self.images[i])

    def tensors(self) -> np.ndarray:
        """Normalized float32 batch [n, h, w, 1]."""
        return (self.images.astype(np.float32) / np.float32(255.0))[..., None]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.images[idx], self.labels[idx], [self.tags[i] for i in idx],
                       self.class_count)

    def split(self, fraction: float, seed: int = 0) -> tuple["Dataset", "Dataset"]:
        """Random split; the first part holds ``fraction`` of the samples."""
        order = np.random.default_rng(seed).permutation(len(self))
        cut = int(round(len(self) * fraction))
        return self.subset(order[:cut]), self.subset(order[cut:])

    @classmethod
    def from_images(cls, images: list[Image], labels, tags=None, class_count=CLASS_COUNT):
        arr = np.stack([im.pixels for im in images]) if images else np.zeros((0, IMAGE_SIZE, IMAGE_SIZE))
        return cls(arr, labels, list(tags) if tags is not None else [], class_count)


def concat(parts: list[Dataset]) -> Dataset:
    return Dataset(np.concatenate([p.images for p in parts]),
                   np.concatenate([p.labels for p in parts]),
                   [t for p in parts for t in p.tags], parts[0].class_count)


# --- CSV ---------------------------------------------------------------------------

def load_csv_dataset(path, tag: str | None = None) -> Dataset:
    """Read ``label,pixel1..pixel784`` rows; labels are re-indexed to 0..23."""
    path = Path(path)
    tag = tag if tag is not None else path.stem
    npx = IMAGE_SIZE * IMAGE_SIZE
    images, labels = [], []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[0] != "label" or len(header) != npx + 1:
            raise ValueError(f"{path}:1: expected header label,pixel1..pixel{npx}")
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != npx + 1:
                raise ValueError(f"{path}:{line}: expected {npx + 1} fields, got {len(row)}")
            try:
                values = [int(v) for v in row]
            except ValueError as exc:
                raise ValueError(f"{path}:{line}: non-integer field ({exc})") from None
            try:
                labels.append(csv_label_to_index(values[0]))
            except ValueError as exc:
                raise ValueError(f"{path}:{line}: {exc}") from None
            px = np.asarray(values[1:])
            if px.min() < 0 or px.max() > 255:
                raise ValueError(f"{path}:{line}: pixel values must lie in 0..255")
            images.append(px.reshape(IMAGE_SIZE, IMAGE_SIZE))
    arr = np.stack(images) if images else np.zeros((0, IMAGE_SIZE, IMAGE_SIZE))
    return Dataset(arr, labels, [tag] * len(labels))


def write_csv_dataset(path, ds: Dataset) -> None:
    npx = IMAGE_SIZE * IMAGE_SIZE
    if ds.images.shape[1:] != (IMAGE_SIZE, IMAGE_SIZE):
        raise ValueError("CSV format stores 28x28 images only")
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["label"] + [f"pixel{i}" for i in range(1, npx + 1)])
        for img, label in zip(ds.images, ds.labels):
            writer.writerow([index_to_csv_label(int(label))] + img.ravel().tolist())


# --- image directories ---------------------------------------------------------------

def load_image_dir_dataset(root, interp="area", size: int = IMAGE_SIZE) -> Dataset:
    """Load ``<root>/<class_name>/*.pgm``; classes are indexed alphabetically.

    Colour PPM files are converted to gray. Every image is resized to
    ``size`` x ``size`` with the chosen interpolation.
    """
    root = Path(root)
    method = InterpMethod.parse(interp)
    class_dirs = sorted(p for p in root.iterdir() if p.is_dir()) if root.is_dir() else []
    if len(class_dirs) != CLASS_COUNT:
        log.warning("%s: found %d class directories, expected %d; continuing",
                    root, len(class_dirs), CLASS_COUNT)
    images, labels, tags = [], [], []
    for index, cdir in enumerate(class_dirs):
        for f in sorted(cdir.iterdir()):
            if f.suffix.lower() not in (".pgm", ".ppm"):
                continue
            try:
                img = read_pgm(f)
            except (OSError, ValueError) as exc:
                raise ValueError(f"{f}: unreadable image ({exc})") from exc
            if (img.width, img.height) != (size, size):
                img = resize(img, size, size, method)
            images.append(img.pixels)
            labels.append(index)
            tags.append(f"{root.name}/{cdir.name}")
    class_count = CLASS_COUNT if len(class_dirs) in (0, CLASS_COUNT) else len(class_dirs)
    arr = np.stack(images) if images else np.zeros((0, size, size))
    return Dataset(arr, labels, tags, class_count)


# --- synthetic generator --------------------------------------------------------------

_FAMILIES = {
    # edge softness, noise sigma, background range, distractors, apparent-size range
    "standard": dict(edge=2.0, noise=8.0, bg=(20, 60), distractors=0, zoom=(0.75, 1.35)),
    "field": dict(edge=6.0, noise=18.0, bg=(40, 110), distractors=3, zoom=(0.6, 1.5)),
}


def _class_geometry(label: int) -> tuple[float, int, bool]:
    """Orientation, satellite count and satellite brightness for a class.

    Orientations are 60 degrees apart and the other two cues ignore scale,
    so class identity survives the standard augmentation's rotation and
    crop zoom.
    """
    angle = math.radians(60.0 * (label % 6))
    variant = label // 6
    return angle, 1 + variant % 2, variant // 2 == 0


def _render(label: int, rng: np.random.Generator, family: str, size: int = SOURCE_SIZE) -> Image:
    cfg = _FAMILIES[family]
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    lo, hi = cfg["bg"]
    canvas = np.full((size, size), rng.uniform(lo, hi))
    if family == "field":
        gx, gy = rng.uniform(-40, 40, size=2)
        canvas += (gx * (xx / size - 0.5) + gy * (yy / size - 0.5))
    angle, satellites, bright = _class_geometry(label)
    angle += math.radians(rng.uniform(-5, 5))
    zoom = rng.uniform(*cfg["zoom"])
    sep = 72.0 * zoom * rng.uniform(0.92, 1.08)
    mid = size / 2 + rng.uniform(-12, 12, size=2)
    direction = np.array([math.cos(angle), math.sin(angle)])
    satellite_level = rng.uniform(200, 250) if bright else rng.uniform(110, 140)
    normal = np.array([-direction[1], direction[0]])
    blobs = [(mid - direction * sep / 2, 30.0 * zoom, rng.uniform(200, 250))]
    offsets = [0.0] if satellites == 1 else [-0.5, 0.5]
    for off in offsets:
        blobs.append((mid + direction * sep / 2 + normal * off * sep, 18.0 * zoom, satellite_level))
    for _ in range(cfg["distractors"]):
        blobs.append((rng.uniform(20, size - 20, size=2), rng.uniform(6, 12), rng.uniform(70, 130)))
    for (cx, cy), radius, level in blobs:
        dist = np.hypot(xx - cx, yy - cy)
        cover = np.clip((radius - dist) / cfg["edge"] + 0.5, 0.0, 1.0)
        canvas = canvas * (1 - cover) + level * cover
    canvas += rng.normal(0.0, cfg["noise"], size=canvas.shape)
    return Image(np.clip(np.rint(canvas), 0, 255).astype(np.uint8))


def synth_sources(classes: int = CLASS_COUNT, per_class: int = 10, seed: int = 0,
                  family: str = "standard") -> tuple[list[Image], np.ndarray]:
    """Full-resolution (240x240) synthetic two-blob images, class-interleaved."""
    if per_class < 1:
        raise ValueError("per_class must be >= 1")
    if family not in _FAMILIES:
        raise ValueError(f"unknown family {family!r}; choose from {sorted(_FAMILIES)}")
    rng = np.random.default_rng(seed)
    images, labels = [], []
    for _ in range(per_class):
        for c in range(classes):
            images.append(_render(c, rng, family))
            labels.append(c)
    return images, np.asarray(labels, dtype=np.int64)


def synth_dataset(classes: int = CLASS_COUNT, per_class: int = 10, seed: int = 0,
                  family: str = "standard", interp="area") -> Dataset:
    """Synthetic sources downscaled to 28x28."""
    sources, labels = synth_sources(classes, per_class, seed, family)
    small = [resize(img, IMAGE_SIZE, IMAGE_SIZE, interp) for img in sources]
    return Dataset.from_images(small, labels, [f"synth-{family}-{seed}"] * len(labels),
                               class_count=max(classes, CLASS_COUNT))


def write_image_dir(root, images: list[Image], labels, names=LETTERS) -> None:
    """Write images in the ``<root>/<class_name>/NNNNN.pgm`` layout."""
    from .imaging import write_pgm
    root = Path(root)
    for i, (img, label) in enumerate(zip(images, labels)):
        d = root / names[int(label)]
        d.mkdir(parents=True, exist_ok=True)
        write_pgm(d / f"{i:05d}.pgm", img)
