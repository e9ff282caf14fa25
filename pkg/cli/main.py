"""
Command-line entry point:

    python -m cli.main split      --config configs/enformer.yaml
    python -m cli.main train      --config ... [--seed N] [--resume runs/x/last]
    python -m cli.main eval       --config ... --checkpoint runs/x/best [--per-image]
    python -m cli.main predict    --checkpoint runs/x/best --input img.png|dir [--threshold 0.5]
    python -m cli.main visualize  --checkpoint runs/x/best --input <dataset folder> [--columns d1,fuse]
    python -m cli.main parameters --model enformer-lite-small

Errors are printed as one JSON line on stderr; the exit code encodes the category.
"""
import argparse
import json
import os
import sys
from typing import Any, Dict, List, Optional, Sequence, Tuple

import cv2
import numpy as np
from tqdm import tqdm

from adapters.polyp import IMAGE_EXTS, PolypFolderAdapter, load_sample, scan_many
from adapters.splits import read_split_manifest, train_val_split, write_split_manifest
from cli.config import RunConfig, load_config, write_resolved_config
from common.errors import EXIT_CODES, ConfigError, DataError, EnFormerError
from common.log import say
from eval.run_eval import evaluate_datasets, predict_full_size, write_report
from eval.sweep import REPORT_COLUMNS
from interpret.panel import visualize_sample
from models.base import get_model
from models.ensemble import EnsembleSegmenter, parameter_report
from training.checkpoint import Checkpoint, load_checkpoint
from training.loop import resolve_device, train

SPLIT_NAME = "split.txt"


def parse_args(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    p = argparse.ArgumentParser(prog="enformer")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp, required=True):
        sp.add_argument("--config", required=required, help="YAML run config.")
        sp.add_argument("--out", type=str, default=None, help="Optional: override output_dir.")

    sp = sub.add_parser("split", help="Pool the training datasets and write the train/val manifest.")
    with_config(sp)
    sp.add_argument("--seed", type=int, default=None, help="Optional: override data.split_seed.")

    sp = sub.add_parser("train", help="Train a model; writes last/best checkpoints and history.csv.")
    with_config(sp)
    sp.add_argument("--seed", type=int, default=None, help="Optional: override train.seed.")
    sp.add_argument("--resume", type=str, default=None, help="Checkpoint to continue from.")
    sp.add_argument("--allow-config-mismatch", action="store_true",
                    help="Load checkpoints written under a different config hash.")

    sp = sub.add_parser("eval", help="Evaluate a checkpoint on the test datasets.")
    with_config(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--per-image", action="store_true", help="Also write per_image.csv.")
    sp.add_argument("--allow-config-mismatch", action="store_true")

    sp = sub.add_parser("predict", help="Probability map + binary mask for an image or a directory.")
    with_config(sp, required=False)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--input", required=True, help="Image file or directory of images.")
    sp.add_argument("--threshold", type=float, default=0.5)

    sp = sub.add_parser("visualize", help="One heatmap panel per sample.")
    with_config(sp, required=False)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--input", required=True, help="Dataset folder with images/ and masks/.")
    sp.add_argument("--columns", type=str, default=None,
                    help="Comma-separated column ids (default: the full layout for this model).")
    sp.add_argument("--limit", type=int, default=None, help="Optional: only the first N samples.")

    sp = sub.add_parser("parameters", help="Per-component parameter counts for a registry name.")
    sp.add_argument("--model", required=True)
    sp.add_argument("--encoder-1-weights", default=None)
    sp.add_argument("--encoder-2-weights", default=None, help="Required for the CoaT-Lite rows.")

    return p.parse_args(argv)


# -------------------- shared helpers --------------------
def _config(args: argparse.Namespace) -> Optional[RunConfig]:
    if not getattr(args, "config", None):
        return None
    cfg = load_config(args.config)
    if getattr(args, "out", None):
        cfg = cfg.model_copy(update={"output_dir": args.out})
    return cfg


def _pool(cfg: RunConfig) -> Dict[str, List[Dict[str, Any]]]:
    if not cfg.data.train_root:
        raise ConfigError("data.train_root is required")
    if not os.path.isdir(cfg.data.train_root):
        raise DataError(f"Training root not found: {cfg.data.train_root}")
    return scan_many(cfg.data.train_root, cfg.data.train_datasets)


def manifest_path(cfg: RunConfig) -> str:
    return cfg.data.split_manifest or os.path.join(cfg.output_dir, SPLIT_NAME)


def _pooled(cfg: RunConfig) -> List[Dict[str, Any]]:
    pool = _pool(cfg)
    pooled = [item for name in cfg.data.train_datasets for item in pool[name]]
    if not pooled:
        raise DataError(f"No samples found under {cfg.data.train_root}")
    return pooled


def _split(cfg: RunConfig) -> Tuple[List[Dict[str, Any]], List[Dict[str, Any]]]:
    """Reads the split manifest if there is one, otherwise splits and writes it."""
    path = manifest_path(cfg)
    if os.path.exists(path):
        return read_split_manifest(path, _pool(cfg))
    train_items, val_items = train_val_split(_pooled(cfg), cfg.data.split_ratio, cfg.data.split_seed)
    write_split_manifest(path, train_items, val_items)
    return train_items, val_items


def _model_from_checkpoint(path: str, cfg: Optional[RunConfig], allow_mismatch: bool = False
                           ) -> Tuple[EnsembleSegmenter, Checkpoint]:
    ckpt = load_checkpoint(path, cfg.hash() if cfg else None, allow_mismatch)
    recipe = dict(ckpt.model) or (cfg.recipe() if cfg else {})
    if not recipe.get("name"):
        raise ConfigError(f"{path}: checkpoint has no model recipe and no config was given")
    model = get_model(**recipe)
    ckpt.restore(model)
    model.to(resolve_device()).eval()
    return model, ckpt


def _list_images(path: str) -> List[str]:
    if os.path.isfile(path):
        return [path]
    if not os.path.isdir(path):
        raise DataError(f"Input not found: {path}")
    files = sorted(os.path.join(path, f) for f in os.listdir(path) if f.lower().endswith(IMAGE_EXTS))
    if not files:
        raise DataError(f"No images under {path}")
    return files


# -------------------- commands --------------------
def cmd_split(args: argparse.Namespace) -> int:
    cfg = _config(args)
    if args.seed is not None:
        cfg = cfg.model_copy(update={"data": cfg.data.model_copy(update={"split_seed": args.seed})})
    train_items, val_items = train_val_split(_pooled(cfg), cfg.data.split_ratio, cfg.data.split_seed)

    path = manifest_path(cfg)
    write_split_manifest(path, train_items, val_items)
    write_resolved_config(cfg)
    say("split", f"train={len(train_items)} val={len(val_items)} -> {path}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _config(args)
    if args.seed is not None:
        cfg = cfg.model_copy(update={"train": cfg.train.model_copy(update={"seed": args.seed})})
    model = get_model(**cfg.recipe())
    train_items, val_items = _split(cfg)
    write_resolved_config(cfg)
    say("train", f"{model.name}: train={len(train_items)} val={len(val_items)} epochs={cfg.train.epochs}")

    result = train(
        model, train_items, val_items, cfg.train,
        out_dir=cfg.output_dir,
        config_hash=cfg.hash(),
        model_recipe=cfg.recipe(),
        resume_from=args.resume,
        allow_config_mismatch=args.allow_config_mismatch,
    )
    if result.best is not None:
        say("train", f"best epoch {result.best.epoch} val_dice={result.best.val_dice:.4f}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = _config(args)
    if not cfg.data.test_root:
        raise ConfigError("data.test_root is required")
    model, _ = _model_from_checkpoint(args.checkpoint, cfg, args.allow_config_mismatch)
    report, per_image = evaluate_datasets(
        model, cfg.data.test_root, cfg.model.name, cfg.data.test_datasets, cfg.eval, cfg.train.img_size
    )
    if report.empty:
        raise DataError(f"None of {cfg.data.test_datasets} found under {cfg.data.test_root}")
    write_resolved_config(cfg)
    write_report(report, cfg.output_dir, per_image if args.per_image else None)
    print(report[["dataset"] + REPORT_COLUMNS].to_string(index=False))
    return 0


def write_prediction(prob: np.ndarray, stem: str, out_dir: str, threshold: float) -> Tuple[str, str]:
    """16-bit probability PNG plus a 0/255 mask PNG at the probability map's size."""
    os.makedirs(out_dir, exist_ok=True)
    prob_path = os.path.join(out_dir, f"{stem}_prob.png")
    mask_path = os.path.join(out_dir, f"{stem}_mask.png")
    cv2.imwrite(prob_path, np.round(np.clip(prob, 0.0, 1.0) * 65535.0).astype(np.uint16))
    cv2.imwrite(mask_path, np.where(prob >= threshold, 255, 0).astype(np.uint8))
    return prob_path, mask_path


def cmd_predict(args: argparse.Namespace) -> int:
    if not 0.0 < args.threshold < 1.0:
        raise ConfigError(f"--threshold must lie in (0, 1), got {args.threshold}")
    cfg = _config(args)
    model, ckpt = _model_from_checkpoint(args.checkpoint, cfg)
    img_size = int(ckpt.model.get("img_size") or (cfg.train.img_size if cfg else 352))
    out_dir = args.out or (cfg.output_dir if cfg else "predictions")

    files = _list_images(args.input)
    for path in tqdm(files, desc="predict", leave=False):
        bgr = cv2.imread(path, cv2.IMREAD_COLOR)
        if bgr is None:
            raise DataError(f"Unreadable image: {path}")
        prob = predict_full_size(model, cv2.cvtColor(bgr, cv2.COLOR_BGR2RGB), img_size)
        write_prediction(prob, os.path.splitext(os.path.basename(path))[0], out_dir, args.threshold)
    say("predict", f"Wrote {len(files)} prediction(s) to: {out_dir}")
    return 0


def cmd_visualize(args: argparse.Namespace) -> int:
    cfg = _config(args)
    model, ckpt = _model_from_checkpoint(args.checkpoint, cfg)
    img_size = int(ckpt.model.get("img_size") or (cfg.train.img_size if cfg else 352))
    out_dir = args.out or (cfg.output_dir if cfg else "panels")
    columns = [c.strip() for c in args.columns.split(",") if c.strip()] if args.columns else None

    folder = os.path.abspath(args.input)
    adapter = PolypFolderAdapter(os.path.dirname(folder), os.path.basename(folder))
    items = list(adapter.iter_items())
    if args.limit is not None:
        items = items[: args.limit]
    if not items:
        raise DataError(f"No samples under {folder}")
    for item in tqdm(items, desc="visualize", leave=False):
        stem = os.path.splitext(item["filename"])[0]
        visualize_sample(model, load_sample(item), os.path.join(out_dir, f"{stem}_panel.png"), columns, img_size)
    say("visualize", f"Wrote {len(items)} panel(s) to: {out_dir}")
    return 0


def cmd_parameters(args: argparse.Namespace) -> int:
    model = get_model(args.model, args.encoder_1_weights, args.encoder_2_weights)
    print(parameter_report(model).to_string(index=False))
    return 0


COMMANDS = {
    "split": cmd_split,
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "visualize": cmd_visualize,
    "parameters": cmd_parameters,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except KeyboardInterrupt:
        print("\nInterrupted by user. Finalizing...")
        return 130
    except EnFormerError as e:
        category = e.category
        message = str(e)
    except Exception as e:  # noqa: BLE001
        category, message = "runtime", f"{type(e).__name__}: {e}"
    print(json.dumps({"error": category, "message": message}), file=sys.stderr)
    return EXIT_CODES.get(category, 1)


if __name__ == "__main__":
    sys.exit(main())
