from typing import Dict, Iterable, List, Mapping, Optional

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field

from eval.metrics import (
    E_MEASURE_EPS,
    WFM_DECAY,
    WFM_KERNEL,
    WFM_SIGMA,
    dice_iou_curves,
    e_measure_curve,
    mae,
    s_measure,
    weighted_fbeta,
)

REPORT_COLUMNS = ["mDice", "mIoU", "wFmeasure", "Smeasure", "meanEm", "maxEm", "MAE"]

# Full-scale numbers (ImageNet-pretrained backbones, 200 epochs) kept for side-by-side printing.
REFERENCE_TARGETS: Dict[str, Dict[str, Dict[str, float]]] = {
    "enformer-lite-large": {"Kvasir": {"mDice": 0.9224}},
    "enformer": {"ETIS-LaribPolypDB": {"mDice": 0.8406}},
    "fcbformer": {"ETIS-LaribPolypDB": {"mDice": 0.7955}},
}


class MetricConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    n_thresholds: int = Field(256, ge=2)
    include_zero_threshold: bool = False  # t=0 binarizes to all-ones
    beta2: float = Field(1.0, gt=0)
    alpha: float = Field(0.5, ge=0, le=1)
    # fixed by py_sod_metrics; listed so resolved configs show them
    wfm_kernel: int = Field(WFM_KERNEL, ge=WFM_KERNEL, le=WFM_KERNEL)
    wfm_sigma: float = Field(WFM_SIGMA, ge=WFM_SIGMA, le=WFM_SIGMA)
    wfm_decay: float = Field(WFM_DECAY, ge=WFM_DECAY, le=WFM_DECAY)
    e_eps: float = Field(E_MEASURE_EPS, gt=0)

    def thresholds(self) -> np.ndarray:
        """t_k = k/(n-1), k = 0..n-1."""
        return np.arange(self.n_thresholds, dtype=np.float64) / (self.n_thresholds - 1)

    def swept_thresholds(self) -> np.ndarray:
        t = self.thresholds()
        return t if self.include_zero_threshold else t[1:]


def sweep_metrics(pred: np.ndarray, gt: np.ndarray, cfg: Optional[MetricConfig] = None) -> Dict[str, float]:
    """One per-image record: threshold-swept means/max plus the continuous-map metrics."""
    cfg = cfg or MetricConfig()
    t = cfg.swept_thresholds()
    dice_c, iou_c = dice_iou_curves(pred, gt, t)
    em_c = e_measure_curve(pred, gt, t, cfg.e_eps)
    return {
        "mDice": float(dice_c.mean()),
        "mIoU": float(iou_c.mean()),
        "wFmeasure": weighted_fbeta(pred, gt, cfg.beta2),
        "Smeasure": s_measure(pred, gt, cfg.alpha),
        "meanEm": float(em_c.mean()),
        "maxEm": float(em_c.max()),
        "MAE": mae(pred, gt),
    }


def aggregate(records: Iterable[Mapping[str, float]]) -> Dict[str, float]:
    """Order-insensitive mean of per-image records."""
    df = pd.DataFrame(list(records), columns=REPORT_COLUMNS)
    if df.empty:
        return {c: float("nan") for c in REPORT_COLUMNS}
    return {c: float(df[c].mean()) for c in REPORT_COLUMNS}


def reference_rows(model_name: str) -> List[Dict[str, object]]:
    rows = []
    for dataset, values in REFERENCE_TARGETS.get(model_name, {}).items():
        rows.append({"model": model_name, "dataset": dataset, **values})
    return rows


def directional_check(report: pd.DataFrame, dataset: str = "ETIS-LaribPolypDB",
                      better: str = "enformer", worse: str = "fcbformer", column: str = "mDice") -> Optional[bool]:
    """Whether `better` beats `worse` on `dataset`; None if either row is missing."""
    rows = report[report["dataset"] == dataset].set_index("model")
    if better not in rows.index or worse not in rows.index:
        return None
    return bool(rows.loc[better, column] > rows.loc[worse, column])
