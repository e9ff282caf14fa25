"""
Per-image segmentation metrics on (P, G) pairs at the original image size.

P is a float map in [0, 1]; G is boolean. Threshold-swept quantities (dice,
IoU, E-measure) are computed for a whole threshold vector at once from
confusion counts; MAE, S-measure and weighted F-measure use the continuous P.
"""
from typing import Tuple

import numpy as np
from py_sod_metrics import WeightedFmeasure

from common.errors import ShapeError

EPS = np.finfo(np.float64).eps
E_MEASURE_EPS = 1e-8


def _pair(pred: np.ndarray, gt: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt).astype(bool)
    if pred.shape != gt.shape:
        raise ShapeError(f"prediction {pred.shape} and ground truth {gt.shape} shapes differ")
    return pred, gt


def binarize(pred: np.ndarray, t: float) -> np.ndarray:
    return np.asarray(pred) >= t


# -------------------- overlap --------------------
def dice(binary: np.ndarray, gt: np.ndarray) -> float:
    b, g = np.asarray(binary).astype(bool), np.asarray(gt).astype(bool)
    if b.shape != g.shape:
        raise ShapeError(f"mask shapes differ: {b.shape} vs {g.shape}")
    denom = b.sum() + g.sum()
    if denom == 0:
        return 1.0
    return float(2.0 * np.logical_and(b, g).sum() / denom)


def iou(binary: np.ndarray, gt: np.ndarray) -> float:
    b, g = np.asarray(binary).astype(bool), np.asarray(gt).astype(bool)
    if b.shape != g.shape:
        raise ShapeError(f"mask shapes differ: {b.shape} vs {g.shape}")
    union = np.logical_or(b, g).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(b, g).sum() / union)


def confusion_counts(pred: np.ndarray, gt: np.ndarray, thresholds: np.ndarray) -> Tuple[np.ndarray, np.ndarray, int, int]:
    """(TP(t), FP(t), |G|, N) for every t, with pixel predicted positive iff P >= t."""
    pred, gt = _pair(pred, gt)
    fg = np.sort(pred[gt])
    bg = np.sort(pred[~gt])
    thresholds = np.asarray(thresholds, dtype=np.float64)
    tp = fg.size - np.searchsorted(fg, thresholds, side="left")
    fp = bg.size - np.searchsorted(bg, thresholds, side="left")
    return tp, fp, int(fg.size), int(pred.size)


def dice_iou_curves(pred: np.ndarray, gt: np.ndarray, thresholds: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    tp, fp, n_fg, _ = confusion_counts(pred, gt, thresholds)
    fn = n_fg - tp
    union = tp + fp + fn
    empty = union == 0
    safe = np.where(empty, 1, union)
    d = np.where(empty, 1.0, 2.0 * tp / np.where(empty, 1, 2 * tp + fp + fn))
    j = np.where(empty, 1.0, tp / safe)
    return d.astype(np.float64), j.astype(np.float64)


# -------------------- MAE --------------------
def mae(pred: np.ndarray, gt: np.ndarray) -> float:
    pred, gt = _pair(pred, gt)
    return float(np.mean(np.abs(pred - gt)))


# -------------------- E-measure --------------------
def _enhanced(phi_p: np.ndarray, phi_g: np.ndarray, eps: float) -> np.ndarray:
    align = 2.0 * phi_p * phi_g / (phi_p ** 2 + phi_g ** 2 + eps)
    return (align + 1.0) ** 2 / 4.0


def e_measure(binary: np.ndarray, gt: np.ndarray, eps: float = E_MEASURE_EPS) -> float:
    b, g = _pair(binary, gt)
    b = b.astype(bool).astype(np.float64)
    mean_g = g.mean()
    if mean_g == 0:
        return float(np.mean(1.0 - b))
    if mean_g == 1:
        return float(np.mean(b))
    g = g.astype(np.float64)
    return float(np.mean(_enhanced(b - b.mean(), g - mean_g, eps)))


def e_measure_curve(pred: np.ndarray, gt: np.ndarray, thresholds: np.ndarray, eps: float = E_MEASURE_EPS) -> np.ndarray:
    """E-measure of binarize(P, t) for every t, from the four (pred, gt) cell counts."""
    tp, fp, n_fg, n = confusion_counts(pred, gt, thresholds)
    tp, fp = tp.astype(np.float64), fp.astype(np.float64)
    if n_fg == 0:
        return 1.0 - fp / n
    if n_fg == n:
        return tp / n
    fn = n_fg - tp
    tn = (n - n_fg) - fp
    mean_b = (tp + fp) / n
    mean_g = n_fg / n
    total = (
        tp * _enhanced(1.0 - mean_b, 1.0 - mean_g, eps)
        + fp * _enhanced(1.0 - mean_b, -mean_g, eps)
        + fn * _enhanced(-mean_b, 1.0 - mean_g, eps)
        + tn * _enhanced(-mean_b, -mean_g, eps)
    )
    return total / n


# -------------------- S-measure --------------------
def _s_object(values: np.ndarray) -> float:
    if values.size == 0:
        return 0.0
    x = values.mean()
    sigma = values.std(ddof=1) if values.size > 1 else 0.0
    return float(2.0 * x / (x * x + 1.0 + sigma + EPS))


def _object_score(pred: np.ndarray, gt: np.ndarray) -> float:
    u = gt.mean()
    fg = _s_object(pred[gt])
    bg = _s_object(1.0 - pred[~gt])
    return float(u * fg + (1.0 - u) * bg)


def _centroid(gt: np.ndarray) -> Tuple[int, int]:
    h, w = gt.shape
    if not gt.any():
        return int(np.round(w / 2)), int(np.round(h / 2))
    y, x = np.argwhere(gt).mean(axis=0).round()
    return int(x) + 1, int(y) + 1


def _ssim(pred: np.ndarray, gt: np.ndarray) -> float:
    n = pred.size
    if n == 0:
        return 0.0
    x, y = pred.mean(), gt.mean()
    denom = max(n - 1, 1)
    sigma_x = np.sum((pred - x) ** 2) / denom
    sigma_y = np.sum((gt - y) ** 2) / denom
    sigma_xy = np.sum((pred - x) * (gt - y)) / denom
    alpha = 4.0 * x * y * sigma_xy
    beta = (x * x + y * y) * (sigma_x + sigma_y)
    if alpha != 0:
        return float(alpha / (beta + EPS))
    return 1.0 if beta == 0 else 0.0


def _region_score(pred: np.ndarray, gt: np.ndarray) -> float:
    h, w = gt.shape
    x, y = _centroid(gt)
    x, y = min(x, w), min(y, h)
    g = gt.astype(np.float64)
    area = h * w
    weights = (x * y / area, (w - x) * y / area, x * (h - y) / area)
    weights = weights + (1.0 - sum(weights),)
    quads = (
        (slice(0, y), slice(0, x)),
        (slice(0, y), slice(x, w)),
        (slice(y, h), slice(0, x)),
        (slice(y, h), slice(x, w)),
    )
    return float(sum(wt * _ssim(pred[q], g[q]) for wt, q in zip(weights, quads) if wt > 0))


def s_measure(pred: np.ndarray, gt: np.ndarray, alpha: float = 0.5) -> float:
    pred, gt = _pair(pred, gt)
    y = gt.mean()
    if y == 0:
        return float(1.0 - pred.mean())
    if y == 1:
        return float(pred.mean())
    score = alpha * _object_score(pred, gt) + (1.0 - alpha) * _region_score(pred, gt)
    return float(max(0.0, score))


# -------------------- weighted F-measure --------------------
# 7x7 Gaussian (sigma 5) smoothing and B = 2 - exp(ln(0.5)/5 * D) are fixed inside py_sod_metrics.
WFM_KERNEL = 7
WFM_SIGMA = 5.0
WFM_DECAY = float(np.log(0.5) / 5.0)


def weighted_fbeta(pred: np.ndarray, gt: np.ndarray, beta2: float = 1.0) -> float:
    pred, gt = _pair(pred, gt)
    if not gt.any():
        return 1.0 if np.all(pred <= 1e-8) else 0.0
    return float(WeightedFmeasure(beta=beta2).cal_wfm(pred, gt))
