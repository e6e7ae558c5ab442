"""Evaluation reports, float/int8 agreement and memory-footprint analysis."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .data import Dataset
from .io import dumps
from .netgraph import ModelSpec, forward, infer_shapes
from .quantizer import QuantizedModel, infer_quantized

DEVICE_RAM_BYTES = 496 * 1024
LOAD_LIMIT_BYTES = 220 * 1024


def predict_proba(model, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Probabilities from a float model, a quantized model, or any callable."""
    if isinstance(model, QuantizedModel):
        run = lambda b: infer_quantized(model, b)
    elif isinstance(model, ModelSpec):
        run = lambda b: forward(model, b)
    elif callable(model):
        run = model
    else:
        raise TypeError(f"cannot evaluate {type(model).__name__}")
    return np.concatenate([np.asarray(run(x[i:i + batch_size]))
                           for i in range(0, len(x), batch_size)])


def predict(model, x: np.ndarray) -> np.ndarray:
    # np.argmax picks the lowest index among ties
    return np.argmax(predict_proba(model, x), axis=1)


@dataclass
class EvalReport:
    accuracy: float
    confusion: np.ndarray  # rows = truth, cols = prediction
    precision: list[float]
    recall: list[float]
    sample_count: int

    def to_dict(self) -> dict:
        d = asdict(self)
        d["confusion"] = self.confusion.tolist()
        return d


def report_from_predictions(labels, preds, class_count: int) -> EvalReport:
    labels = np.asarray(labels, dtype=np.int64)
    preds = np.asarray(preds, dtype=np.int64)
    confusion = np.zeros((class_count, class_count), dtype=np.int64)
    np.add.at(confusion, (labels, preds), 1)
    diag = np.diag(confusion)
    col = confusion.sum(axis=0)
    row = confusion.sum(axis=1)
    precision = np.divide(diag, col, out=np.zeros(class_count), where=col > 0)
    recall = np.divide(diag, row, out=np.zeros(class_count), where=row > 0)
    total = int(confusion.sum())
    return EvalReport(int(diag.sum()) / total, confusion, precision.tolist(),
                      recall.tolist(), total)


def evaluate(model, ds: Dataset) -> EvalReport:
    if len(ds) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    return report_from_predictions(ds.labels, predict(model, ds.tensors()), ds.class_count)


def _layers_of(model):
    if isinstance(model, QuantizedModel):
        return model.input_shape, [l.spec for l in model.layers]
    return model.input_shape, list(model.layers)


def agreement(model_f, model_q, ds: Dataset) -> float:
    """Fraction of samples on which both models pick the same class."""
    if _layers_of(model_f) != _layers_of(model_q):
        raise ValueError("models do not share an architecture")
    if len(ds) == 0:
        raise ValueError("cannot compare on an empty dataset")
    x = ds.tensors()
    return float(np.mean(predict(model_f, x) == predict(model_q, x)))


@dataclass
class FootprintReport:
    model_bytes: int
    estimated_scratch_bytes: int
    budget_bytes: int
    fits: bool
    load_limit_bytes: int
    within_load_limit: bool

    def to_dict(self) -> dict:
        return asdict(self)


def scratch_bytes(qm: QuantizedModel) -> int:
    """Largest int8 input+output activation pair over all layers."""
    if not qm.layers:
        return 0
    shapes = [qm.input_shape] + infer_shapes(qm.architecture())
    return max(int(np.prod(a)) + int(np.prod(b)) for a, b in zip(shapes, shapes[1:]))


def footprint(qm: QuantizedModel, budget_bytes: int = DEVICE_RAM_BYTES,
              load_limit_bytes: int = LOAD_LIMIT_BYTES) -> FootprintReport:
    model_bytes = len(dumps(qm))
    scratch = scratch_bytes(qm)
    return FootprintReport(model_bytes, scratch, budget_bytes,
                           model_bytes + scratch <= budget_bytes,
                           load_limit_bytes, model_bytes <= load_limit_bytes)
