import numpy as np
import pandas as pd
import pytest
from pydantic import ValidationError
from scipy import ndimage

from eval.metrics import (
    binarize,
    confusion_counts,
    dice,
    dice_iou_curves,
    e_measure,
    e_measure_curve,
    iou,
    mae,
    s_measure,
    weighted_fbeta,
)
from eval.sweep import MetricConfig, aggregate, directional_check, reference_rows, sweep_metrics
from common.errors import ShapeError
from oracles import bf_dice, bf_e_measure, bf_iou, bf_mae, bf_s_measure, bf_weighted_f

TOL = 1e-6


def _random_pairs(n=100, size=8, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        g = rng.random((size, size)) < rng.uniform(0.1, 0.6)
        p = rng.random((size, size))
        snap = rng.random((size, size)) < 0.2
        p[snap] = np.round(p[snap] * 255) / 255
        out.append((p, g))
    return out


def _square(size=16, lo=4, hi=12):
    g = np.zeros((size, size), dtype=bool)
    g[lo:hi, lo:hi] = True
    return g


# -------------------- oracle equivalence --------------------
def test_overlap_curves_match_brute_force():
    t = MetricConfig().swept_thresholds()[::17]
    for p, g in _random_pairs():
        d, j = dice_iou_curves(p, g, t)
        for k, tk in enumerate(t):
            b = p >= tk
            assert abs(d[k] - bf_dice(b, g)) < TOL
            assert abs(j[k] - bf_iou(b, g)) < TOL
            assert abs(d[k] - dice(b, g)) < TOL and abs(j[k] - iou(b, g)) < TOL


def test_dice_iou_identity():
    t = MetricConfig().swept_thresholds()
    for p, g in _random_pairs(20):
        d, j = dice_iou_curves(p, g, t)
        assert np.allclose(d, 2 * j / (1 + j), rtol=0, atol=1e-12)


def test_e_measure_matches_brute_force():
    t = MetricConfig().swept_thresholds()[::31]
    for p, g in _random_pairs():
        curve = e_measure_curve(p, g, t)
        for k, tk in enumerate(t):
            b = binarize(p, tk)
            ref = bf_e_measure(b, g)
            assert abs(curve[k] - ref) < TOL
            assert abs(e_measure(b, g) - ref) < TOL


def test_mae_and_s_measure_match_brute_force():
    for p, g in _random_pairs():
        assert abs(mae(p, g) - bf_mae(p, g)) < TOL
        assert abs(s_measure(p, g) - bf_s_measure(p, g)) < TOL


def test_weighted_f_matches_brute_force():
    rng = np.random.default_rng(3)
    for _ in range(100):
        g = rng.random((8, 8)) < rng.uniform(0.1, 0.5)
        if not g.any():
            g[3, 3] = True
        p = rng.random((8, 8))
        # equally near foreground pixels carry different errors; follow the library's pick among them
        _, nearest = ndimage.distance_transform_edt(~g, return_indices=True)
        assert abs(weighted_fbeta(p, g) - bf_weighted_f(p, g, tie_break=nearest)) < TOL


def test_weighted_f_on_a_box_needs_no_tie_break():
    rng = np.random.default_rng(4)
    for _ in range(50):
        g = np.zeros((10, 10), dtype=bool)
        top, left = rng.integers(0, 6, size=2)
        g[top:top + rng.integers(1, 5), left:left + rng.integers(1, 5)] = True
        p = rng.random((10, 10))
        assert abs(weighted_fbeta(p, g) - bf_weighted_f(p, g)) < TOL


def test_confusion_counts_are_inclusive():
    p = np.array([[0.2, 0.5], [0.5, 0.9]])
    g = np.array([[0, 1], [0, 1]], dtype=bool)
    tp, fp, n_fg, n = confusion_counts(p, g, np.array([0.5]))
    assert (tp[0], fp[0], n_fg, n) == (2, 1, 2, 4)


# -------------------- limits --------------------
def test_identity_limits():
    g = _square()
    r = sweep_metrics(g.astype(float), g)
    for key in ("mDice", "mIoU", "wFmeasure", "Smeasure", "maxEm", "meanEm"):
        assert r[key] == pytest.approx(1.0, abs=TOL), key
    assert r["MAE"] == 0.0


def test_complement_limits():
    g = _square()
    p = 1.0 - g.astype(float)
    r = sweep_metrics(p, g)
    assert r["mDice"] == pytest.approx(0.0, abs=TOL)
    assert r["mIoU"] == pytest.approx(0.0, abs=TOL)
    assert r["wFmeasure"] == pytest.approx(0.0, abs=TOL)
    assert r["MAE"] == 1.0


def test_zero_threshold_row_is_optional():
    cfg = MetricConfig()
    assert len(cfg.thresholds()) == 256 and cfg.thresholds()[-1] == 1.0
    assert len(cfg.swept_thresholds()) == 255 and cfg.swept_thresholds()[0] == pytest.approx(1 / 255)
    g = _square()
    full = sweep_metrics(g.astype(float), g, MetricConfig(include_zero_threshold=True))
    assert full["mDice"] < 1.0


def test_empty_ground_truth():
    g = np.zeros((8, 8), dtype=bool)
    assert weighted_fbeta(np.zeros((8, 8)), g) == 1.0
    assert weighted_fbeta(np.full((8, 8), 0.3), g) == 0.0
    assert s_measure(np.full((8, 8), 0.25), g) == pytest.approx(0.75)
    b = np.zeros((8, 8), dtype=bool)
    b[0, :2] = True
    assert e_measure(b, g) == pytest.approx(1 - 2 / 64)
    assert dice(np.zeros_like(g), g) == 1.0 and iou(np.zeros_like(g), g) == 1.0


def test_full_ground_truth():
    g = np.ones((8, 8), dtype=bool)
    assert s_measure(np.full((8, 8), 0.25), g) == pytest.approx(0.25)
    b = np.ones((8, 8), dtype=bool)
    b[0, 0] = False
    assert e_measure(b, g) == pytest.approx(63 / 64)


def test_weighted_f_constants_are_fixed():
    cfg = MetricConfig()
    assert (cfg.wfm_kernel, cfg.wfm_sigma) == (7, 5.0)
    assert cfg.wfm_decay == pytest.approx(np.log(0.5) / 5)
    with pytest.raises(ValidationError):
        MetricConfig(wfm_sigma=3.0)


def test_shape_mismatch():
    with pytest.raises(ShapeError):
        mae(np.zeros((4, 4)), np.zeros((4, 5), dtype=bool))


# -------------------- aggregation --------------------
def test_aggregate_is_order_insensitive():
    records = [sweep_metrics(p, g) for p, g in _random_pairs(6)]
    a = aggregate(records)
    b = aggregate(list(reversed(records)))
    assert a == pytest.approx(b)
    assert a["MAE"] == pytest.approx(np.mean([r["MAE"] for r in records]))


def test_reference_rows_and_directional_check():
    assert reference_rows("enformer-lite-large") == [
        {"model": "enformer-lite-large", "dataset": "Kvasir", "mDice": 0.9224}
    ]
    report = pd.DataFrame([
        {"model": "enformer", "dataset": "ETIS-LaribPolypDB", "mDice": 0.8406},
        {"model": "fcbformer", "dataset": "ETIS-LaribPolypDB", "mDice": 0.7955},
    ])
    assert directional_check(report) is True
    assert directional_check(report, dataset="Kvasir") is None


def test_ranges_and_degenerate_predictions():
    for p, g in _random_pairs(20) + [(np.zeros((8, 8)), _square(8, 2, 6)), (np.ones((8, 8)), _square(8, 2, 6)),
                                     (np.zeros((8, 8)), np.ones((8, 8), bool)),
                                     (np.ones((8, 8)), np.zeros((8, 8), bool))]:
        r = sweep_metrics(p, g)
        for key, value in r.items():
            assert np.isfinite(value) and -TOL <= value <= 1 + TOL, key
        assert r["maxEm"] >= r["meanEm"]
