"""
Differentiable building blocks shared by every assembly.

Each block is a torch module; the operation it implements is its forward.
All feature maps are NCHW tensors. Blocks that end in an upsample take the
target spatial size explicitly, always derived from the *model input* size
(e.g. H/4 for LE, MLP and the fuse decoder).
"""
from typing import List, Sequence, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from common.errors import ShapeError

# Bilinear resizing everywhere uses half-pixel centres (align_corners=False).
ALIGN_CORNERS = False

Size = Tuple[int, int]


def group_count(channels: int) -> int:
    """GroupNorm groups: min(32, C) when it divides C, else one group per channel."""
    groups = min(32, channels)
    if channels % groups != 0:
        groups = channels
    return groups


def stride_size(image_size: Sequence[int], stride: int) -> Size:
    return int(image_size[0]) // stride, int(image_size[1]) // stride


def upsample(x: torch.Tensor, size: Sequence[int]) -> torch.Tensor:
    """Bilinear resize of the spatial dims to `size`; channels are untouched."""
    h, w = int(size[0]), int(size[1])
    if h < 1 or w < 1:
        raise ShapeError(f"Upsample target must be positive, got {(h, w)}")
    if tuple(x.shape[-2:]) == (h, w):
        return x
    return F.interpolate(x, size=(h, w), mode="bilinear", align_corners=ALIGN_CORNERS)


def _check_channels(x: torch.Tensor, expected: int, where: str) -> None:
    if x.dim() != 4 or x.shape[1] != expected:
        raise ShapeError(f"{where}: expected (N, {expected}, H, W), got {tuple(x.shape)}")


def _check_same_spatial(where: str, *maps: torch.Tensor) -> None:
    sizes = {tuple(m.shape[-2:]) for m in maps}
    if len(sizes) != 1:
        raise ShapeError(f"{where}: spatial dims differ {sorted(sizes)}")


class GSC(nn.Module):
    """GroupNorm -> SiLU -> 3x3 conv."""

    def __init__(self, in_channels: int, out_channels: int, bias: bool = True):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.norm = nn.GroupNorm(group_count(in_channels), in_channels)
        self.act = nn.SiLU()
        self.conv = nn.Conv2d(in_channels, out_channels, kernel_size=3, stride=1, padding=1, bias=bias)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        _check_channels(x, self.in_channels, "GSC")
        return self.conv(self.act(self.norm(x)))


class RB(nn.Module):
    """Residual block x + GSC(GSC(x)); a 1x1 conv projects the skip when widths differ."""

    def __init__(self, in_channels: int, out_channels: int):
        super().__init__()
        # one channel per GroupNorm group cancels a per-channel bias exactly
        self.in_layers = GSC(in_channels, out_channels, bias=group_count(out_channels) != out_channels)
        self.out_layers = GSC(out_channels, out_channels)
        if in_channels == out_channels:
            self.skip = nn.Identity()
        else:
            self.skip = nn.Conv2d(in_channels, out_channels, kernel_size=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.skip(x) + self.out_layers(self.in_layers(x))


class RB2(nn.Module):
    """Two residual blocks with independent parameters."""

    def __init__(self, in_channels: int, out_channels: int):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.first = RB(in_channels, out_channels)
        self.second = RB(out_channels, out_channels)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.second(self.first(x))


class LocalEmphasis(nn.Module):
    """LE: RB2 at the stage's own resolution, then resize to the H/4 grid."""

    def __init__(self, in_channels: int, out_channels: int = 64):
        super().__init__()
        self.rb2 = RB2(in_channels, out_channels)

    def forward(self, x: torch.Tensor, size: Sequence[int]) -> torch.Tensor:
        return upsample(self.rb2(x), size)


class DecoderBlock(nn.Module):
    """D(x, y) = RB2(concat(x, y)), x first along channels."""

    def __init__(self, x_channels: int, y_channels: int, out_channels: int = 64):
        super().__init__()
        self.rb2 = RB2(x_channels + y_channels, out_channels)

    def forward(self, x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
        _check_same_spatial("DecoderBlock", x, y)
        return self.rb2(torch.cat([x, y], dim=1))


class StepwiseAggregation(nn.Module):
    """SFA = D(D(D(e4, e3), e2), e1): the deepest stage enters first."""

    def __init__(self, width: int = 64):
        super().__init__()
        self.blocks = nn.ModuleList([DecoderBlock(width, width, width) for _ in range(3)])

    def forward(self, e1: torch.Tensor, e2: torch.Tensor, e3: torch.Tensor, e4: torch.Tensor) -> torch.Tensor:
        _check_same_spatial("StepwiseAggregation", e1, e2, e3, e4)
        x = self.blocks[0](e4, e3)
        x = self.blocks[1](x, e2)
        return self.blocks[2](x, e1)


class MLPBlock(nn.Module):
    """MLP(x) = Up(ReLU(BN(Conv1x1(x))))."""

    def __init__(self, in_channels: int, out_channels: int = 64):
        super().__init__()
        self.conv = nn.Conv2d(in_channels, out_channels, kernel_size=1, bias=False)
        self.norm = nn.BatchNorm2d(out_channels)
        self.act = nn.ReLU()

    def project(self, x: torch.Tensor) -> torch.Tensor:
        return self.act(self.norm(self.conv(x)))

    def forward(self, x: torch.Tensor, size: Sequence[int]) -> torch.Tensor:
        return upsample(self.project(x), size)


class FuseStage(nn.Module):
    """F^j(e1j, e2j) = MLP(concat(RB2(e1j), RB2(e2j))); convolution-branch features first."""

    def __init__(self, in_channels_1: int, in_channels_2: int, branch_width: int = 64, out_channels: int = 64):
        super().__init__()
        self.branch_1 = RB2(in_channels_1, branch_width)
        self.branch_2 = RB2(in_channels_2, branch_width)
        self.mlp = MLPBlock(2 * branch_width, out_channels)

    def forward(self, e1j: torch.Tensor, e2j: torch.Tensor, size: Sequence[int]) -> torch.Tensor:
        _check_same_spatial("FuseStage", e1j, e2j)
        return self.mlp(torch.cat([self.branch_1(e1j), self.branch_2(e2j)], dim=1), size)


class FuseDecoder(nn.Module):
    """F([e_i^j]) = MLP(concat(F^1 .. F^4)), all at the H/4 grid."""

    def __init__(
        self,
        widths_1: Sequence[int],
        widths_2: Sequence[int],
        branch_width: int = 64,
        stage_width: int = 64,
        out_channels: int = 64,
    ):
        super().__init__()
        if len(widths_1) != 4 or len(widths_2) != 4:
            raise ShapeError(f"FuseDecoder needs 4 stage widths per encoder, got {len(widths_1)} and {len(widths_2)}")
        self.out_channels = out_channels
        self.stages = nn.ModuleList(
            [FuseStage(w1, w2, branch_width, stage_width) for w1, w2 in zip(widths_1, widths_2)]
        )
        self.mlp = MLPBlock(4 * stage_width, out_channels)

    def forward_stages(
        self, feats_1: Sequence[torch.Tensor], feats_2: Sequence[torch.Tensor], size: Sequence[int]
    ) -> List[torch.Tensor]:
        if len(feats_1) != 4 or len(feats_2) != 4:
            raise ShapeError(f"FuseDecoder expects 4 stage pairs, got {len(feats_1)} and {len(feats_2)}")
        return [stage(a, b, size) for stage, a, b in zip(self.stages, feats_1, feats_2)]

    def fuse(self, stage_maps: Sequence[torch.Tensor], size: Sequence[int]) -> torch.Tensor:
        return self.mlp(torch.cat(list(stage_maps), dim=1), size)

    def forward(
        self, feats_1: Sequence[torch.Tensor], feats_2: Sequence[torch.Tensor], size: Sequence[int]
    ) -> torch.Tensor:
        return self.fuse(self.forward_stages(feats_1, feats_2, size), size)


class PredictionHead(nn.Module):
    """PH(x) = sigmoid(Conv1x1(RB2(Up(x)))) at full image resolution."""

    def __init__(self, in_channels: int, width: int = 64):
        super().__init__()
        self.refine = RB2(in_channels, width)
        self.conv = nn.Conv2d(width, 1, kernel_size=1)

    def logits(self, x: torch.Tensor, size: Sequence[int]) -> torch.Tensor:
        return self.conv(self.refine(upsample(x, size)))

    def forward(self, x: torch.Tensor, size: Sequence[int]) -> torch.Tensor:
        return torch.sigmoid(self.logits(x, size))
