import json
import os
import warnings
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import torch
import torch.nn as nn
from tqdm import tqdm

from adapters.polyp import STANDARD_COUNTS, load_sample, scan_dataset
from adapters.transforms import IMG_SIZE, image_to_tensor
from common.errors import DataError
from common.log import PROGRESS_EVERY, say
from eval.sweep import REPORT_COLUMNS, MetricConfig, aggregate, reference_rows, sweep_metrics
from models.blocks import upsample

TEST_DATASETS = tuple(STANDARD_COUNTS["test"])


@torch.no_grad()
def predict_full_size(model: nn.Module, image: np.ndarray, img_size: int = IMG_SIZE) -> np.ndarray:
    """Forward at img_size, then bilinear-resize P back to the image's own (H, W)."""
    device = next(model.parameters()).device
    x = image_to_tensor(image, img_size).unsqueeze(0).to(device)
    prob = model(x)
    prob = upsample(prob, image.shape[:2])
    return prob[0, 0].clamp(0.0, 1.0).cpu().numpy().astype(np.float64)


def evaluate(
    model: nn.Module,
    items: Sequence[Dict[str, Any]],
    cfg: Optional[MetricConfig] = None,
    img_size: int = IMG_SIZE,
) -> Tuple[Dict[str, float], List[Dict[str, Any]]]:
    """Mean metrics over `items` plus the per-image records they came from."""
    if len(items) == 0:
        raise DataError("Test set is empty")
    cfg = cfg or MetricConfig()
    model.eval()

    records: List[Dict[str, Any]] = []
    try:
        for i, item in enumerate(tqdm(items, desc="eval", leave=False)):
            sample = load_sample(item)
            prob = predict_full_size(model, sample.image, img_size)
            rec = {"id": item["id"], **sweep_metrics(prob, sample.mask.astype(bool), cfg)}
            records.append(rec)

            if PROGRESS_EVERY and (i + 1) % PROGRESS_EVERY == 0:
                say(str(i + 1), f"running mDice={np.mean([r['mDice'] for r in records]):.4f}")
    except KeyboardInterrupt:
        say("eval", "Interrupted by user. Finalizing...")
        if not records:
            raise

    return aggregate(records), records


def evaluate_datasets(
    model: nn.Module,
    test_root: str,
    model_name: str,
    datasets: Sequence[str] = TEST_DATASETS,
    cfg: Optional[MetricConfig] = None,
    img_size: int = IMG_SIZE,
) -> Tuple[pd.DataFrame, pd.DataFrame]:
    """One report row per available dataset; missing datasets are skipped with a warning."""
    rows, per_image = [], []
    for name in datasets:
        try:
            items = scan_dataset(test_root, name)
        except DataError as e:
            warnings.warn(f"Skipping {name}: {e}")
            continue
        if not items:
            warnings.warn(f"Skipping {name}: no samples under {os.path.join(test_root, name)}")
            continue
        summary, records = evaluate(model, items, cfg, img_size)
        rows.append({"model": model_name, "dataset": name, **summary})
        per_image.extend({"model": model_name, "dataset": name, **r} for r in records)
        say(name, " ".join(f"{c}={summary[c]:.4f}" for c in REPORT_COLUMNS))

    for ref in reference_rows(model_name):
        say("reference", f"{ref['dataset']}: " + " ".join(f"{k}={v}" for k, v in ref.items()
                                                        if k not in ("model", "dataset")))

    report = pd.DataFrame(rows, columns=["model", "dataset"] + REPORT_COLUMNS)
    return report, pd.DataFrame(per_image, columns=["model", "dataset", "id"] + REPORT_COLUMNS)


def write_report(report: pd.DataFrame, out_dir: str, per_image: Optional[pd.DataFrame] = None) -> Dict[str, str]:
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "csv": os.path.join(out_dir, "report.csv"),
        "json": os.path.join(out_dir, "report.json"),
    }
    report.to_csv(paths["csv"], index=False)
    with open(paths["json"], "w", encoding="utf-8") as f:
        json.dump(report.to_dict("records"), f, indent=2)
    if per_image is not None:
        paths["per_image"] = os.path.join(out_dir, "per_image.csv")
        per_image.to_csv(paths["per_image"], index=False)
    say("eval", f"Wrote results to: {paths['csv']}")
    return paths
