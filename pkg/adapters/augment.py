"""
Training-time augmentation.

Six ops, each switched on independently with probability p (0.5):
geometric (image AND mask, same parameters): horizontal flip, vertical flip,
affine, grid distortion; color (image only): color jitter, unsharp.

A draw is split into `draw_plan` (all randomness, fixed rng consumption) and
`apply_plan` (pure), so a plan can be replayed on a mask alone.
"""
from dataclasses import dataclass, field
from typing import Dict, Tuple

import cv2
import numpy as np
import torch
import torchvision.transforms.functional as TF

from .base import SegmentationSample

GEOMETRIC_OPS = ("hflip", "vflip", "affine", "grid")
COLOR_OPS = ("color_jitter", "unsharp")
OPS = GEOMETRIC_OPS + COLOR_OPS

ROTATION_DEG = 45.0
TRANSLATE_FRAC = 0.10
SCALE_RANGE = (0.9, 1.1)
GRID_CELLS = 5
GRID_LIMIT = 0.3
JITTER = dict(brightness=0.4, contrast=0.4, saturation=0.4, hue=0.1)
UNSHARP_SIGMA = (0.5, 2.0)
UNSHARP_KERNEL = 5
UNSHARP_AMOUNT = 1.0


@dataclass(frozen=True)
class AugmentPlan:
    applied: Dict[str, bool] = field(default_factory=lambda: {op: False for op in OPS})
    angle: float = 0.0
    translate: Tuple[float, float] = (0.0, 0.0)
    scale: float = 1.0
    grid_x: Tuple[float, ...] = (1.0,) * GRID_CELLS
    grid_y: Tuple[float, ...] = (1.0,) * GRID_CELLS
    brightness: float = 1.0
    contrast: float = 1.0
    saturation: float = 1.0
    hue: float = 0.0
    sigma: float = 1.0

    @classmethod
    def only(cls, *ops: str, **params) -> "AugmentPlan":
        unknown = set(ops) - set(OPS)
        if unknown:
            raise ValueError(f"Unknown augmentation ops: {sorted(unknown)}")
        return cls(applied={op: op in ops for op in OPS}, **params)

    def on(self, op: str) -> bool:
        return self.applied.get(op, False)


def draw_plan(rng: np.random.Generator, p: float = 0.5) -> AugmentPlan:
    flags = rng.random(len(OPS)) < p
    tx, ty = rng.uniform(-TRANSLATE_FRAC, TRANSLATE_FRAC, size=2)
    b, c, s = 1.0 + rng.uniform(-1.0, 1.0, size=3) * np.array(
        [JITTER["brightness"], JITTER["contrast"], JITTER["saturation"]]
    )
    return AugmentPlan(
        applied={op: bool(f) for op, f in zip(OPS, flags)},
        angle=float(rng.uniform(-ROTATION_DEG, ROTATION_DEG)),
        translate=(float(tx), float(ty)),
        scale=float(rng.uniform(*SCALE_RANGE)),
        grid_x=tuple(float(v) for v in 1.0 + rng.uniform(-GRID_LIMIT, GRID_LIMIT, size=GRID_CELLS)),
        grid_y=tuple(float(v) for v in 1.0 + rng.uniform(-GRID_LIMIT, GRID_LIMIT, size=GRID_CELLS)),
        brightness=float(b),
        contrast=float(c),
        saturation=float(s),
        hue=float(rng.uniform(-JITTER["hue"], JITTER["hue"])),
        sigma=float(rng.uniform(*UNSHARP_SIGMA)),
    )


# -------------------- geometric --------------------
def _affine(arr: np.ndarray, plan: AugmentPlan, interp: int) -> np.ndarray:
    h, w = arr.shape[:2]
    mat = cv2.getRotationMatrix2D((w / 2.0, h / 2.0), plan.angle, plan.scale)
    mat[0, 2] += plan.translate[0] * w
    mat[1, 2] += plan.translate[1] * h
    return cv2.warpAffine(arr, mat, (w, h), flags=interp, borderMode=cv2.BORDER_REFLECT_101)


def _grid_axis(length: int, factors: Tuple[float, ...]) -> np.ndarray:
    """Source coordinate for every output coordinate along one axis; endpoints stay put."""
    nominal = np.linspace(0.0, length - 1, len(factors) + 1)
    displaced = np.concatenate([[0.0], np.cumsum(factors)])
    displaced = displaced / displaced[-1] * (length - 1)
    return np.interp(np.arange(length), nominal, displaced).astype(np.float32)


def _grid(arr: np.ndarray, plan: AugmentPlan, interp: int) -> np.ndarray:
    h, w = arr.shape[:2]
    map_x, map_y = np.meshgrid(_grid_axis(w, plan.grid_x), _grid_axis(h, plan.grid_y))
    return cv2.remap(arr, map_x, map_y, interpolation=interp, borderMode=cv2.BORDER_REFLECT_101)


def apply_geometric(arr: np.ndarray, plan: AugmentPlan, is_mask: bool = False) -> np.ndarray:
    interp = cv2.INTER_NEAREST if is_mask else cv2.INTER_LINEAR
    if plan.on("hflip"):
        arr = arr[:, ::-1]
    if plan.on("vflip"):
        arr = arr[::-1]
    arr = np.ascontiguousarray(arr)
    if plan.on("affine"):
        arr = _affine(arr, plan, interp)
    if plan.on("grid"):
        arr = _grid(arr, plan, interp)
    return arr


def warp_mask(mask: np.ndarray, plan: AugmentPlan) -> np.ndarray:
    return (apply_geometric(mask, plan, is_mask=True) > 0).astype(np.uint8)


# -------------------- color --------------------
def color_jitter(image: np.ndarray, plan: AugmentPlan) -> np.ndarray:
    """torchvision's ColorJitter adjustments in a fixed order, with the plan's factors."""
    x = torch.from_numpy(np.ascontiguousarray(image)).permute(2, 0, 1)
    x = TF.adjust_brightness(x, plan.brightness)
    x = TF.adjust_contrast(x, plan.contrast)
    x = TF.adjust_saturation(x, plan.saturation)
    x = TF.adjust_hue(x, plan.hue)
    return x.permute(1, 2, 0).contiguous().numpy()


def unsharp(image: np.ndarray, plan: AugmentPlan) -> np.ndarray:
    blurred = cv2.GaussianBlur(image, (UNSHARP_KERNEL, UNSHARP_KERNEL), plan.sigma)
    return cv2.addWeighted(image, 1.0 + UNSHARP_AMOUNT, blurred, -UNSHARP_AMOUNT, 0)


def apply_plan(image: np.ndarray, mask: np.ndarray, plan: AugmentPlan) -> Tuple[np.ndarray, np.ndarray]:
    image = apply_geometric(image, plan)
    mask = warp_mask(mask, plan)
    if plan.on("color_jitter"):
        image = color_jitter(image, plan)
    if plan.on("unsharp"):
        image = unsharp(image, plan)
    return image, mask


def augment(sample: SegmentationSample, rng: np.random.Generator, p: float = 0.5) -> SegmentationSample:
    plan = draw_plan(rng, p)
    if not any(plan.applied.values()):
        return sample
    image, mask = apply_plan(sample.image, sample.mask, plan)
    return sample.replace(image, mask)
