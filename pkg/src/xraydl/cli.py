"""Command-line entry point: ``xraydl scan|train|evaluate|predict``.

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 divergence.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import tempfile
from pathlib import Path

from .config import RunConfig, load_config
from .data import ImageLoader, PreprocessConfig, make_batches, resolve_splits, scan_dataset
from .errors import ConsistencyError, UsageError, XrdlError
from .metrics import ConfusionMatrix, emit_history, evaluate_model
from .models import (
    build_reference_cnn, build_test_backbone, build_transfer_model, build_vgg16_backbone, forward_model,
    predict_classes,
)
from .persist import atomic_write_bytes, import_backbone_weights, load_checkpoint
from .rng import Rng
from .train import fit


log = logging.getLogger("xraydl")


OUTPUT_FILES = ("best.ckpt", "history.csv", "report.txt", "report.json", "confusion.csv")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="xraydl", description="Chest X-ray classification pipeline.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("scan", help="summarise a dataset directory")
    s.add_argument("root")

    t = sub.add_parser("train", help="train a model from a config file")
    t.add_argument("--config", required=True)
    t.add_argument("--out", required=True)

    e = sub.add_parser("evaluate", help="evaluate a checkpoint on a dataset split")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", default="test", choices=("train", "valid", "test"))
    e.add_argument("--out", help="also write report.txt, report.json and confusion.csv here")

    pr = sub.add_parser("predict", help="classify one image")
    pr.add_argument("--checkpoint", required=True)
    pr.add_argument("--image", required=True)
    return p


def build_model(cfg: RunConfig, num_classes: int) -> tuple:
    shape = cfg.input_shape()
    if cfg.model_kind == "reference_cnn":
        return build_reference_cnn(shape, num_classes, seed=cfg.seed)
    if cfg.backbone == "vgg16":
        backbone = build_vgg16_backbone(shape, seed=cfg.seed)
    else:
        backbone = build_test_backbone(shape, seed=cfg.seed)
    if cfg.backbone_weights:
        backbone = import_backbone_weights(backbone, cfg.backbone_weights)
    return build_transfer_model(cfg.model_kind, backbone, num_classes, seed=cfg.seed)


def _run_metadata(cfg: RunConfig) -> dict:
    return {"task": cfg.task, "model_kind": cfg.model_kind, "split": list(cfg.split),
            "image_size": list(cfg.image_size), "channels": cfg.channels, "batch_size": cfg.batch_size,
            "data_seed": cfg.seed}


def _write_reports(out_dir: Path, report, cm: ConfusionMatrix) -> None:
    atomic_write_bytes(out_dir / "report.txt", report.render().encode("utf-8"))
    atomic_write_bytes(out_dir / "report.json", report.to_json().encode("utf-8"))
    atomic_write_bytes(out_dir / "confusion.csv", cm.to_csv().encode("utf-8"))


def cmd_scan(args) -> int:
    print(scan_dataset(args.root).summary())
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config, seed_override=os.environ.get("XRDL_SEED"))
    manifest = scan_dataset(cfg.data_root)
    splits = resolve_splits(manifest, cfg.split, cfg.seed)
    if not splits["valid"]:
        raise UsageError("no validation data: set split.valid > 0 or provide a valid/ directory")
    num_classes = len(manifest.class_names)
    spec, params = build_model(cfg, num_classes)
    loader = ImageLoader(cfg.preprocess_config())
    aug = cfg.augment_config()
    epoch_root = Rng(cfg.seed)

    def train_batches(epoch):
        return make_batches(splits["train"], num_classes, cfg.batch_size, shuffle=True,
                            rng=epoch_root.derive(epoch), loader=loader, augment_config=aug)

    def valid_batches(epoch):
        return make_batches(splits["valid"], num_classes, cfg.batch_size, loader=loader)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    # everything is staged and only moved into place once the run succeeds
    with tempfile.TemporaryDirectory(prefix=".staging-", dir=out_dir) as staging:
        stage = Path(staging)
        result = fit(spec, params, train_batches, valid_batches, cfg.train_config(),
                     checkpoint_path=stage / "best.ckpt", class_names=manifest.class_names,
                     metadata=_run_metadata(cfg))
        emit_history(result.history, stage / "history.csv")
        report_split = "test" if splits["test"] else "valid"
        _, _, cm, report = evaluate_model(
            spec, result.params,
            make_batches(splits[report_split], num_classes, cfg.batch_size, loader=loader),
            manifest.class_names)
        _write_reports(stage, report, cm)
        for name in OUTPUT_FILES:
            os.replace(stage / name, out_dir / name)
    best = min(result.history, key=lambda r: r.val_loss)
    print(f"trained {len(result.history)} epochs; best epoch {best.epoch} val_loss {best.val_loss!r}")
    print(f"{report_split} report:")
    print(report.render(), end="")
    return 0


def _checkpoint_inputs(ckpt):
    meta = ckpt.metadata
    try:
        pre = PreprocessConfig(tuple(meta["image_size"]), int(meta["channels"]))
    except KeyError as exc:
        raise ConsistencyError(f"checkpoint metadata lacks {exc}") from exc
    if not hasattr(ckpt.spec, "num_classes"):
        raise ConsistencyError("checkpoint holds backbone weights, not a classifier")
    return pre


def cmd_evaluate(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    pre = _checkpoint_inputs(ckpt)
    meta = ckpt.metadata
    manifest = scan_dataset(args.data)
    if ckpt.class_names and manifest.class_names != ckpt.class_names:
        raise ConsistencyError(f"dataset classes {manifest.class_names} differ from checkpoint "
                               f"classes {ckpt.class_names}")
    splits = resolve_splits(manifest, meta.get("split", (1.0, 0.0, 0.0)), int(meta.get("data_seed", 0)))
    items = splits[args.split]
    batches = make_batches(items, ckpt.spec.num_classes, int(meta.get("batch_size", 32)),
                           loader=ImageLoader(pre, cache=False))
    loss, acc, cm, report = evaluate_model(ckpt.spec, ckpt.params, batches, manifest.class_names)
    print(f"split: {args.split} ({cm.total} images)")
    print(f"loss: {loss!r}")
    print(f"accuracy: {acc!r}")
    print(report.render(), end="")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_reports(out, report, cm)
    return 0


def cmd_predict(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    pre = _checkpoint_inputs(ckpt)
    image = ImageLoader(pre, cache=False)(args.image)
    out, _ = forward_model(ckpt.spec, ckpt.params, image[None], "infer")
    probs = out.data[0]
    names = ckpt.class_names or [str(i) for i in range(len(probs))]
    print(f"predicted: {names[predict_classes(out)[0]]}")
    for name, p in zip(names, probs):
        print(f"{name}: {float(p):.6f}")
    return 0


COMMANDS = {"scan": cmd_scan, "train": cmd_train, "evaluate": cmd_evaluate, "predict": cmd_predict}


def run_cli(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        build_parser().print_usage(sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except XrdlError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


def main() -> None:
    sys.exit(run_cli())

if __name__ == "__main__":
    main()
