from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import torch

from models.blocks import upsample


@dataclass
class Heatmap:
    """(H, W) values in [0, 1] and the module/layer that produced them."""

    values: np.ndarray
    tag: str


def minmax(x: torch.Tensor, dims: Sequence[int]) -> torch.Tensor:
    """Min-max scale over `dims`; slices with no spread map to 0."""
    lo = x.amin(dim=tuple(dims), keepdim=True)
    hi = x.amax(dim=tuple(dims), keepdim=True)
    span = hi - lo
    return torch.where(span > 0, (x - lo) / torch.where(span > 0, span, torch.ones_like(span)), torch.zeros_like(x))


@torch.no_grad()
def feature_summary(fm: torch.Tensor, size: Optional[Sequence[int]] = None, tag: str = "feature") -> Heatmap:
    """Per-channel [0,1] scaling, channel sum, [0,1] rescale, then resize to `size`."""
    if fm.dim() == 4:
        fm = fm[0]
    x = fm.detach().double()
    summed = minmax(x, (1, 2)).sum(dim=0)
    out = minmax(summed, (0, 1))
    if size is not None:
        out = upsample(out[None, None], size)[0, 0].clamp(0.0, 1.0)
    return Heatmap(out.cpu().numpy(), tag)
