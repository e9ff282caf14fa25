"""
One-row visualization panels: image, mask, blend, then heatmap columns.

Column ids:
    image, mask, blend     the sample itself
    e1_1, e2_1, fuse_1     feature summaries of the first stage of each encoder
                           and of the first fuse stage (from `trace`)
    d1, d2, fuse, head     Grad-CAM at CB_D, PLD+, the fuse decoder and the
                           head's RB2 refinement
"""
import os
from typing import Dict, List, Optional, Sequence

import cv2
import matplotlib
import numpy as np
import torch
import torch.nn as nn

from adapters.base import SegmentationSample
from adapters.transforms import image_to_tensor, resize_image, resize_mask
from common.errors import RegistryError
from interpret.feature_maps import Heatmap, feature_summary
from interpret.gradcam import GradCAM, available_layers, resolve_layer

COLORMAP = "viridis"
MASK_COLOR = np.array([255, 0, 0], dtype=np.float32)
BASE_COLUMNS = ("image", "mask", "blend")
SUMMARY_COLUMNS = ("e1_1", "e2_1", "fuse_1")
CAM_COLUMNS = ("d1", "d2", "fuse", "head")
FULL_LAYOUT = BASE_COLUMNS + SUMMARY_COLUMNS + CAM_COLUMNS


def registered_columns(model: nn.Module) -> List[str]:
    cols = list(BASE_COLUMNS) + ["e1_1", "e2_1"]
    if getattr(model, "fusion", None) is not None:
        cols.append("fuse_1")
    cols.extend(available_layers(model))
    return cols


def default_columns(model: nn.Module) -> List[str]:
    """The full ten-column layout, minus columns this assembly has no module for."""
    allowed = set(registered_columns(model))
    return [c for c in FULL_LAYOUT if c in allowed]


def colorize(values: np.ndarray, cmap: str = COLORMAP) -> np.ndarray:
    rgba = matplotlib.colormaps[cmap](np.clip(values, 0.0, 1.0))
    return (rgba[..., :3] * 255.0 + 0.5).astype(np.uint8)


def blend(image: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """0.5 * image + 0.5 * (mask * color)."""
    overlay = mask.astype(np.float32)[..., None] * MASK_COLOR
    return (0.5 * image.astype(np.float32) + 0.5 * overlay + 0.5).astype(np.uint8)


def compute_heatmaps(model: nn.Module, x: torch.Tensor, columns: Sequence[str]) -> Dict[str, Heatmap]:
    """Heatmaps for the non-base columns, at the resolution of `x`."""
    allowed = registered_columns(model)
    unknown = [c for c in columns if c not in allowed]
    if unknown:
        raise RegistryError("panel column", unknown[0], allowed)
    size = tuple(x.shape[-2:])
    model.eval()

    out: Dict[str, Heatmap] = {}
    wanted_summaries = [c for c in columns if c in SUMMARY_COLUMNS]
    if wanted_summaries:
        with torch.no_grad():
            t = model.trace(x)
        sources = {"e1_1": t.e1[0], "e2_1": t.e2[0], "fuse_1": t.fuse_stages[0] if t.fuse_stages else None}
        for c in wanted_summaries:
            out[c] = feature_summary(sources[c], size, tag=c)

    cams = [c for c in columns if c in CAM_COLUMNS]
    if cams:
        with GradCAM(model, {c: resolve_layer(model, c) for c in cams}) as cam:
            out.update(cam(x))
    return out


def render_panel(
    sample: SegmentationSample,
    heatmaps: Dict[str, Heatmap],
    path: str,
    columns: Optional[Sequence[str]] = None,
    size: Optional[int] = None,
) -> str:
    """Write one PNG row: base columns from the sample, the rest from `heatmaps`."""
    columns = list(columns) if columns is not None else list(BASE_COLUMNS) + list(heatmaps)
    if not any(c not in BASE_COLUMNS for c in columns):
        raise ValueError("A panel needs at least one heatmap column")
    h, w = (size, size) if size else sample.image.shape[:2]
    image = resize_image(sample.image, (h, w))
    mask = resize_mask(sample.mask, (h, w))

    tiles = []
    for c in columns:
        if c == "image":
            tiles.append(image)
        elif c == "mask":
            tiles.append(np.repeat((mask * 255).astype(np.uint8)[..., None], 3, axis=2))
        elif c == "blend":
            tiles.append(blend(image, mask))
        else:
            if c not in heatmaps:
                raise RegistryError("heatmap", c, heatmaps)
            tiles.append(colorize(resize_image(heatmaps[c].values.astype(np.float32), (h, w))))
    row = np.concatenate(tiles, axis=1)

    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    if not cv2.imwrite(path, cv2.cvtColor(row, cv2.COLOR_RGB2BGR)):
        raise OSError(f"Could not write panel to {path}")
    return path


def visualize_sample(model: nn.Module, sample: SegmentationSample, path: str,
                     columns: Optional[Sequence[str]] = None, img_size: int = 352) -> str:
    columns = list(columns) if columns else default_columns(model)
    device = next(model.parameters()).device
    x = image_to_tensor(sample.image, img_size).unsqueeze(0).to(device)
    heatmaps = compute_heatmaps(model, x, [c for c in columns if c not in BASE_COLUMNS])
    return render_panel(sample, heatmaps, path, columns, size=img_size)
