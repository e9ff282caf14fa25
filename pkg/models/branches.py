"""
Branch-specific encoder/decoder pieces: the residual convolution branch
(CB_E / CB_D, a Unet over RB blocks) and the transformer-branch decoder PLD+.
"""
from typing import List, Sequence, Tuple

import torch
import torch.nn as nn

from common.errors import ShapeError
from models.backbones import Encoder, check_image, init_conv_fan_out
from models.blocks import RB, RB2, LocalEmphasis, StepwiseAggregation, upsample

CB_BASE_WIDTHS = (16, 32, 64, 128, 256, 512)
CB_LEVELS = len(CB_BASE_WIDTHS)  # strides 1, 2, 4, 8, 16, 32


def scaled_widths(width_mult: float) -> Tuple[int, ...]:
    return tuple(max(4, int(round(w * width_mult))) for w in CB_BASE_WIDTHS)


class ConvBranchEncoder(Encoder):
    """CB_E: stem conv, then per level two RBs followed by a stride-2 conv.

    The six level outputs are the Unet skips; levels 2..5 (strides 4..32) are
    the 4-stage interface.
    """

    def __init__(self, width_mult: float = 1.0, blocks_per_level: int = 2):
        super().__init__()
        self.widths = scaled_widths(width_mult)
        self.stage_widths = tuple(self.widths[2:])
        self.stem = nn.Conv2d(3, self.widths[0], kernel_size=3, padding=1)
        levels, downs, in_ch = [], [], self.widths[0]
        for i, w in enumerate(self.widths):
            blocks = [RB(in_ch, w)] + [RB(w, w) for _ in range(blocks_per_level - 1)]
            levels.append(nn.Sequential(*blocks))
            if i < CB_LEVELS - 1:
                downs.append(nn.Conv2d(w, w, kernel_size=3, stride=2, padding=1))
            in_ch = w
        self.levels = nn.ModuleList(levels)
        self.downs = nn.ModuleList(downs)
        init_conv_fan_out(self)

    def forward_with_skips(self, x: torch.Tensor) -> Tuple[List[torch.Tensor], List[torch.Tensor]]:
        h = self.stem(x)
        skips = []
        for i, level in enumerate(self.levels):
            h = level(h)
            skips.append(h)
            if i < len(self.downs):
                h = self.downs[i](h)
        return skips[2:], skips

    def forward_stages(self, x: torch.Tensor) -> List[torch.Tensor]:
        return self.forward_with_skips(x)[0]


def conv_branch_encode(encoder: ConvBranchEncoder, image: torch.Tensor) -> Tuple[List[torch.Tensor], List[torch.Tensor]]:
    check_image(image)
    return encoder.forward_with_skips(image)


class ConvBranchDecoder(nn.Module):
    """CB_D: from the stride-32 skip upward, upsample x2, concat the skip, RB2."""

    def __init__(self, widths: Sequence[int], out_width: int = 32):
        super().__init__()
        if len(widths) != CB_LEVELS:
            raise ShapeError(f"ConvBranchDecoder needs {CB_LEVELS} level widths, got {len(widths)}")
        self.widths = tuple(widths)
        self.out_width = out_width
        ups, prev = [], widths[-1]
        for i in range(CB_LEVELS - 2, -1, -1):
            out = out_width if i == 0 else widths[i]
            ups.append(RB2(prev + widths[i], out))
            prev = out
        self.ups = nn.ModuleList(ups)

    def forward(self, skips: Sequence[torch.Tensor]) -> torch.Tensor:
        if len(skips) != CB_LEVELS or any(s is None for s in skips):
            raise ShapeError(f"ConvBranchDecoder needs all {CB_LEVELS} skips, got {len(skips)}")
        x = skips[-1]
        for block, skip in zip(self.ups, reversed(skips[:-1])):
            x = upsample(x, skip.shape[-2:])
            x = block(torch.cat([x, skip], dim=1))
        return x


class PLDPlus(nn.Module):
    """PLD+: LE on every transformer stage, then stepwise aggregation at H/4."""

    def __init__(self, in_widths: Sequence[int], width: int = 64):
        super().__init__()
        if len(in_widths) != 4:
            raise ShapeError(f"PLDPlus needs 4 stage widths, got {len(in_widths)}")
        self.out_channels = width
        self.le = nn.ModuleList([LocalEmphasis(w, width) for w in in_widths])
        self.sfa = StepwiseAggregation(width)

    def emphasize(self, feats: Sequence[torch.Tensor], size: Sequence[int]) -> List[torch.Tensor]:
        return [le(f, size) for le, f in zip(self.le, feats)]

    def forward(self, feats: Sequence[torch.Tensor], size: Sequence[int]) -> torch.Tensor:
        """`size` is the H/4 grid of the model input."""
        if len(feats) != 4:
            raise ShapeError(f"PLDPlus expects 4 stages, got {len(feats)}")
        return self.sfa(*self.emphasize(feats, size))
