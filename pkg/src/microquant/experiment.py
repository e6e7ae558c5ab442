"""Standard vs. interpolation augmentation comparison, float and int8."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .data import IMAGE_SIZE, Dataset, synth_dataset, synth_sources
from .imaging import AugmentParams, Image, InterpMethod, augment_interpolation, augment_standard, resize
from .metrics import evaluate
from .netgraph import init_weights, reference_architecture
from .quantizer import calibrate, quantize_model
from .trainer import TrainConfig, fit

VARIANTS = len(InterpMethod)  # interpolation arm yields one image per method
ARMS = ("standard", "interpolation")


@dataclass
class ExperimentConfig:
    classes: int = 24
    train_size: int = 1200  # augmented samples per arm
    test_per_class: int = 10
    generalization_per_class: int = 10
    epochs: int = 20
    batch_size: int = 32
    representative_size: int = 128
    seed: int = 0
    arms: tuple[str, str] = ARMS
    rotation_degrees_max: float = 20.0
    crop_size: int = 20
    contrast_jitter: float = 0.1

    def __post_init__(self):
        self.arms = tuple(self.arms)
        for arm in self.arms:
            if arm not in ARMS:
                raise ValueError(f"unknown augmentation {arm!r}; choose from {ARMS}")
        if not 1 <= self.classes <= 24:
            raise ValueError("the reference architecture classifies at most 24 classes")
        if self.train_size < VARIANTS * self.classes:
            raise ValueError(f"train_size must allow at least one source per class "
                             f"({VARIANTS * self.classes})")


def augment_sources(sources: list[Image], labels, arm: str, cfg: ExperimentConfig) -> Dataset:
    """Expand each 240x240 source into ``VARIANTS`` 28x28 training images."""
    images, out_labels = [], []
    for i, (src, label) in enumerate(zip(sources, labels)):
        if arm == "interpolation":
            variants = augment_interpolation(src, IMAGE_SIZE)
        else:
            base = resize(src, IMAGE_SIZE, IMAGE_SIZE, InterpMethod.AREA)
            variants = [augment_standard(base, AugmentParams(
                cfg.rotation_degrees_max, cfg.crop_size, IMAGE_SIZE, cfg.contrast_jitter,
                seed=cfg.seed * 1_000_003 + i * VARIANTS + v)) for v in range(VARIANTS)]
        images.extend(variants)
        out_labels.extend([int(label)] * len(variants))
    return Dataset.from_images(images, out_labels, [f"train-{arm}"] * len(images))


def run_arm(arm: str, sources, labels, test: Dataset, gen: Dataset, cfg: ExperimentConfig) -> dict:
    train = augment_sources(sources, labels, arm, cfg)
    spec = init_weights(reference_architecture(), seed=cfg.seed)
    tcfg = TrainConfig(epochs=cfg.epochs, batch_size=cfg.batch_size, seed=cfg.seed)
    result = fit(spec, (train.tensors(), train.labels), None, tcfg)
    model = result.model
    reps = test.tensors()[np.random.default_rng(cfg.seed).permutation(len(test))[:cfg.representative_size]]
    qm = quantize_model(model, calibrate(model, reps))
    test_f = evaluate(model, test).accuracy
    test_q = evaluate(qm, test).accuracy
    return {
        "augmentation": arm,
        "train_accuracy": result.history[-1].train_accuracy,
        "test_accuracy_float": test_f,
        "test_accuracy_int8": test_q,
        "generalization_accuracy": evaluate(qm, gen).accuracy,
        "quantization_drop": test_f - test_q,
    }


def experiment_augmentation_compare(cfg: ExperimentConfig | None = None, sources=None) -> dict:
    """Train the same architecture on both augmentation arms and compare.

    ``sources`` is an optional ``(images_240, labels)`` pair; by default the
    synthetic generator supplies it. The test set is area-downscaled held-out
    synthetic data and the generalization set comes from the ``field`` family.
    """
    cfg = cfg or ExperimentConfig()
    per_source = cfg.train_size // VARIANTS
    if sources is None:
        per_class = max(1, per_source // cfg.classes)
        sources = synth_sources(cfg.classes, per_class, seed=cfg.seed)
    images, labels = sources
    if len(images) < cfg.classes or len(set(np.asarray(labels).tolist())) < cfg.classes:
        raise ValueError("need at least one source image for every class")
    images, labels = list(images)[:per_source], np.asarray(labels)[:per_source]
    test = synth_dataset(cfg.classes, cfg.test_per_class, seed=cfg.seed + 1)
    gen = synth_dataset(cfg.classes, cfg.generalization_per_class, seed=cfg.seed + 2, family="field")

    rows = []
    for n, arm in enumerate(cfg.arms, start=1):
        row = {"model": f"Model {n}"}
        row.update(run_arm(arm, images, labels, test, gen, cfg))
        rows.append(row)
    return {
        "config": asdict(cfg),
        "train_samples_per_arm": len(images) * VARIANTS,
        "test_samples": len(test),
        "generalization_samples": len(gen),
        "rows": rows,
    }


def _rounded(obj):
    if isinstance(obj, float):
        return round(obj, 6)
    if isinstance(obj, dict):
        return {k: _rounded(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_rounded(v) for v in obj]
    return obj


def report_json(report: dict) -> str:
    return json.dumps(_rounded(report), indent=2, sort_keys=True) + "\n"


REPORT_COLUMNS = ("model", "augmentation", "train_accuracy", "test_accuracy_float",
                  "test_accuracy_int8", "generalization_accuracy", "quantization_drop")


def report_csv(report: dict) -> str:
    lines = [",".join(REPORT_COLUMNS)]
    for row in report["rows"]:
        lines.append(",".join(str(_rounded(row[c])) for c in REPORT_COLUMNS))
    return "\n".join(lines) + "\n"
