from typing import Sequence, Tuple

import cv2
import numpy as np
import torch

from .base import SegmentationSample

IMG_SIZE = 352
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


def normalize_image(image: np.ndarray) -> np.ndarray:
    """(H, W, 3) float in [0, 1] -> channelwise standardized float32."""
    mean = np.asarray(IMAGENET_MEAN, dtype=np.float32)
    std = np.asarray(IMAGENET_STD, dtype=np.float32)
    return ((image.astype(np.float32) - mean) / std).astype(np.float32)


def denormalize_image(x: torch.Tensor) -> torch.Tensor:
    """Inverse of the standardization for (3, H, W) or (N, 3, H, W) tensors, clamped to [0, 1]."""
    mean = torch.tensor(IMAGENET_MEAN, dtype=x.dtype, device=x.device).view(3, 1, 1)
    std = torch.tensor(IMAGENET_STD, dtype=x.dtype, device=x.device).view(3, 1, 1)
    return (x * std + mean).clamp(0.0, 1.0)


def resize_image(image: np.ndarray, size: Sequence[int]) -> np.ndarray:
    h, w = int(size[0]), int(size[1])
    if image.shape[:2] == (h, w):
        return image
    return cv2.resize(image, (w, h), interpolation=cv2.INTER_LINEAR)


def resize_mask(mask: np.ndarray, size: Sequence[int]) -> np.ndarray:
    h, w = int(size[0]), int(size[1])
    if mask.shape[:2] != (h, w):
        mask = cv2.resize(mask, (w, h), interpolation=cv2.INTER_NEAREST)
    return (mask > 0).astype(np.uint8)


def image_to_tensor(image: np.ndarray, size: int = IMG_SIZE) -> torch.Tensor:
    """uint8 RGB (H, W, 3) -> normalized (3, size, size) float32 tensor."""
    resized = resize_image(image, (size, size)).astype(np.float32) / 255.0
    return torch.from_numpy(np.ascontiguousarray(normalize_image(resized).transpose(2, 0, 1)))


def normalize_resize(sample: SegmentationSample, size: int = IMG_SIZE) -> Tuple[torch.Tensor, torch.Tensor]:
    """Model-ready (3, size, size) image and (1, size, size) {0,1} float mask."""
    mask = resize_mask(sample.mask, (size, size))
    return image_to_tensor(sample.image, size), torch.from_numpy(mask[None].astype(np.float32))
