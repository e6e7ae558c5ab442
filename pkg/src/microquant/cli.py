"""``microquant`` command-line interface. Reports go to stdout as JSON."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import data as datamod
from .experiment import ARMS, ExperimentConfig, experiment_augmentation_compare, report_csv, report_json
from .imaging import (AugmentParams, InterpMethod, augment_interpolation, augment_standard,
                      normalize, read_pgm, resize, write_pgm)
from .io import load_model, save_model
from .metrics import DEVICE_RAM_BYTES, evaluate, footprint
from .netgraph import ModelSpec, init_weights, load_architecture, param_count, reference_architecture
from .quantizer import DEFAULT_REPRESENTATIVE_SIZE, QuantizedModel, calibrate, infer_quantized, quantize_model
from .trainer import TrainConfig, fit

INTERP_CHOICES = [m.value for m in InterpMethod]


def _emit(obj, csv_path=None, csv_text=None):
    sys.stdout.write(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    if csv_path and csv_text is not None:
        Path(csv_path).write_text(csv_text)


def _load_data(path, interp="area") -> datamod.Dataset:
    p = Path(path)
    if p.is_dir():
        return datamod.load_image_dir_dataset(p, interp)
    return datamod.load_csv_dataset(p)


def cmd_synth(args):
    if args.sources_dir:
        images, labels = datamod.synth_sources(args.classes, args.per_class, args.seed, args.family)
        datamod.write_image_dir(args.sources_dir, images, labels)
    ds = datamod.synth_dataset(args.classes, args.per_class, args.seed, args.family, args.interp)
    datamod.write_csv_dataset(args.out, ds)
    _emit({"samples": len(ds), "classes": args.classes, "out": str(args.out)})


def cmd_train(args):
    spec = load_architecture(args.arch) if args.arch else reference_architecture()
    spec = init_weights(spec, seed=args.seed)
    train = _load_data(args.data, args.interp)
    val = None
    if args.val:
        v = _load_data(args.val, args.interp)
        val = (v.tensors(), v.labels)
    cfg = TrainConfig(learning_rate=args.lr, batch_size=args.batch_size, epochs=args.epochs,
                      seed=args.seed, checkpoint_path=args.out)
    result = fit(spec, (train.tensors(), train.labels), val, cfg)
    save_model(args.out, result.model)
    _emit({"parameters": param_count(spec), "best_epoch": result.best_epoch,
           "best_val_accuracy": result.best_val_accuracy,
           "history": [asdict(h) for h in result.history], "out": str(args.out)})


def cmd_quantize(args):
    model = load_model(args.model)
    if not isinstance(model, ModelSpec):
        raise ValueError("quantize expects a float model")
    ds = _load_data(args.data, args.interp)
    order = np.random.default_rng(args.seed).permutation(len(ds))[:args.representative_size]
    profile = calibrate(model, ds.tensors()[order])
    qm = quantize_model(model, profile)
    size = save_model(args.out, qm)
    _emit({"representative_samples": profile.sample_count, "model_bytes": size,
           "out": str(args.out)})


def cmd_eval(args):
    model = load_model(args.model)
    report = evaluate(model, _load_data(args.data, args.interp))
    out = report.to_dict()
    out["quantized"] = isinstance(model, QuantizedModel)
    csv_text = None
    if args.csv:
        csv_text = "class,precision,recall\n" + "".join(
            f"{datamod.LETTERS[i] if i < len(datamod.LETTERS) else i},{p:.6f},{r:.6f}\n"
            for i, (p, r) in enumerate(zip(report.precision, report.recall)))
    _emit(out, args.csv, csv_text)


def cmd_infer(args):
    model = load_model(args.model)
    img = read_pgm(args.image)
    h, w, _ = model.input_shape
    if (img.height, img.width) != (h, w):
        img = resize(img, w, h, args.interp)
    x = normalize(img)
    if isinstance(model, QuantizedModel):
        probs = infer_quantized(model, x)
    else:
        from .netgraph import forward
        probs = forward(model, x)
    probs = np.asarray(probs, dtype=np.float64)
    top = int(np.argmax(probs))
    _emit({"prediction": top,
           "letter": datamod.LETTERS[top] if top < len(datamod.LETTERS) else None,
           "probabilities": probs.round(6).tolist()})


def cmd_augment(args):
    img = read_pgm(args.image)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if args.mode == "interpolation":
        for method, variant in zip(InterpMethod, augment_interpolation(img, args.target)):
            path = out / f"{Path(args.image).stem}_{method.value}.pgm"
            write_pgm(path, variant)
            written.append(str(path))
    else:
        if (img.width, img.height) != (args.target, args.target):
            img = resize(img, args.target, args.target, args.interp)
        for i in range(args.count):
            params = AugmentParams(args.rotation, args.crop, args.target, args.contrast,
                                   seed=args.seed + i)
            path = out / f"{Path(args.image).stem}_std{i:03d}.pgm"
            write_pgm(path, augment_standard(img, params))
            written.append(str(path))
    _emit({"written": written})


def cmd_footprint(args):
    model = load_model(args.model)
    if not isinstance(model, QuantizedModel):
        raise ValueError("footprint expects a quantized model")
    _emit(footprint(model, args.budget_bytes).to_dict())


def cmd_experiment(args):
    arms = ("standard", "standard") if args.control else tuple(args.arms)
    cfg = ExperimentConfig(classes=args.classes, train_size=args.train_size,
                           test_per_class=args.test_per_class,
                           generalization_per_class=args.generalization_per_class,
                           epochs=args.epochs, batch_size=args.batch_size,
                           representative_size=args.representative_size, seed=args.seed,
                           arms=arms)
    report = experiment_augmentation_compare(cfg)
    text = report_json(report)
    if args.out:
        Path(args.out).write_text(text)
    if args.csv:
        Path(args.csv).write_text(report_csv(report))
    sys.stdout.write(text)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="microquant", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(func=func)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--interp", choices=INTERP_CHOICES, default="area",
                       help="interpolation for resizing (default: area)")
        return p

    p = add("synth", cmd_synth, "generate a synthetic 24-class dataset")
    p.add_argument("--out", required=True, help="CSV output path")
    p.add_argument("--per-class", type=int, default=50)
    p.add_argument("--classes", type=int, default=24)
    p.add_argument("--family", choices=["standard", "field"], default="standard")
    p.add_argument("--sources-dir", help="also write the 240x240 sources as <dir>/<class>/*.pgm")

    p = add("train", cmd_train, "train a float model")
    p.add_argument("--data", required=True)
    p.add_argument("--val")
    p.add_argument("--out", required=True)
    p.add_argument("--arch", help="architecture JSON (default: bundled reference)")
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=0.001)

    p = add("quantize", cmd_quantize, "full-integer post-training quantization")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True, help="representative data source")
    p.add_argument("--out", required=True)
    p.add_argument("--representative-size", type=int, default=DEFAULT_REPRESENTATIVE_SIZE)

    p = add("eval", cmd_eval, "accuracy and confusion matrix")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--csv", help="write per-class precision/recall CSV")

    p = add("infer", cmd_infer, "classify one PGM image")
    p.add_argument("--model", required=True)
    p.add_argument("--image", required=True)

    p = add("augment", cmd_augment, "write augmented variants of a PGM image")
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--mode", choices=ARMS, default="standard")
    p.add_argument("--count", type=int, default=5)
    p.add_argument("--target", type=int, default=28)
    p.add_argument("--rotation", type=float, default=20.0)
    p.add_argument("--crop", type=int, default=20)
    p.add_argument("--contrast", type=float, default=0.1)

    p = add("footprint", cmd_footprint, "model size and scratch memory vs. budget")
    p.add_argument("--model", required=True)
    p.add_argument("--budget-bytes", type=int, default=DEVICE_RAM_BYTES)

    p = add("experiment", cmd_experiment, "standard vs. interpolation augmentation")
    p.add_argument("--out", help="write the JSON report here as well")
    p.add_argument("--csv", help="write the table as CSV")
    p.add_argument("--classes", type=int, default=24)
    p.add_argument("--train-size", type=int, default=1200)
    p.add_argument("--test-per-class", type=int, default=10)
    p.add_argument("--generalization-per-class", type=int, default=10)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--representative-size", type=int, default=DEFAULT_REPRESENTATIVE_SIZE)
    p.add_argument("--arms", nargs=2, choices=ARMS, default=list(ARMS))
    p.add_argument("--control", action="store_true", help="standard augmentation on both arms")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        args.func(args)
    except (ValueError, OSError) as exc:
        print(f"microquant: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
