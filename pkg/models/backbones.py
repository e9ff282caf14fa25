"""
Multi-scale encoders behind one 4-stage interface.

Every encoder maps a (N, 3, H, W) image with H, W divisible by 32 to four
feature maps at strides 4, 8, 16, 32 whose channel widths are declared in
`stage_widths`. Assembly code relies only on that contract.
"""
import math
from abc import ABC, abstractmethod
from typing import Dict, List, Optional, Sequence, Tuple

import torch
import torch.nn as nn
from pydantic import BaseModel, ConfigDict
from timm.layers import DropPath, trunc_normal_
from torchvision.models import resnet50
from torchvision.models.resnet import BasicBlock

from common.errors import BackboneUnavailableError, RegistryError, ShapeError
from models.weights import load_pretrained

STAGE_STRIDES = (4, 8, 16, 32)


class EncoderSpec(BaseModel):
    """Names a backbone; `variant` picks a size inside a family."""

    model_config = ConfigDict(extra="forbid")

    name: str
    variant: Optional[str] = None
    width_mult: float = 1.0
    pretrained: Optional[str] = None
    img_size: int = 352


def check_image(x: torch.Tensor) -> None:
    if x.dim() != 4 or x.shape[1] != 3:
        raise ShapeError(f"Expected an image batch (N, 3, H, W), got {tuple(x.shape)}")
    h, w = x.shape[-2:]
    if h % 32 or w % 32:
        raise ShapeError(f"Image height and width must be divisible by 32, got {(h, w)}")


def init_conv_fan_out(module: nn.Module) -> None:
    for m in module.modules():
        if isinstance(m, nn.Conv2d):
            nn.init.kaiming_normal_(m.weight, mode="fan_out", nonlinearity="relu")
            if m.bias is not None:
                nn.init.zeros_(m.bias)


class Encoder(nn.Module, ABC):
    stage_widths: Tuple[int, int, int, int]

    @abstractmethod
    def forward_stages(self, x: torch.Tensor) -> List[torch.Tensor]:
        raise NotImplementedError

    def forward(self, x: torch.Tensor) -> List[torch.Tensor]:
        check_image(x)
        return self.forward_stages(x)


def encode(encoder: Encoder, image: torch.Tensor) -> List[torch.Tensor]:
    return encoder(image)


# -------------------- PVTv2-style transformer --------------------
def tokens_to_map(x: torch.Tensor, h: int, w: int) -> torch.Tensor:
    b, n, c = x.shape
    return x.transpose(1, 2).reshape(b, c, h, w)


def map_to_tokens(x: torch.Tensor) -> torch.Tensor:
    return x.flatten(2).transpose(1, 2)


class DWConv(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.dwconv = nn.Conv2d(dim, dim, 3, 1, 1, bias=True, groups=dim)

    def forward(self, x: torch.Tensor, h: int, w: int) -> torch.Tensor:
        return map_to_tokens(self.dwconv(tokens_to_map(x, h, w)))


class ConvFFN(nn.Module):
    """Linear -> depth-wise 3x3 conv -> GELU -> Linear."""

    def __init__(self, dim: int, hidden: int, drop: float = 0.0):
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden)
        self.dwconv = DWConv(hidden)
        self.act = nn.GELU()
        self.fc2 = nn.Linear(hidden, dim)
        self.drop = nn.Dropout(drop)

    def forward(self, x: torch.Tensor, h: int, w: int) -> torch.Tensor:
        x = self.drop(self.act(self.dwconv(self.fc1(x), h, w)))
        return self.drop(self.fc2(x))


class SpatialReductionAttention(nn.Module):
    """Multi-head attention whose keys/values come from an sr_ratio-downsampled grid."""

    def __init__(self, dim: int, num_heads: int, sr_ratio: int = 1, qkv_bias: bool = True,
                 attn_drop: float = 0.0, proj_drop: float = 0.0):
        super().__init__()
        if dim % num_heads:
            raise ShapeError(f"dim {dim} should be divided by num_heads {num_heads}")
        self.num_heads = num_heads
        self.scale = (dim // num_heads) ** -0.5
        self.q = nn.Linear(dim, dim, bias=qkv_bias)
        self.kv = nn.Linear(dim, dim * 2, bias=qkv_bias)
        self.attn_drop = nn.Dropout(attn_drop)
        self.proj = nn.Linear(dim, dim)
        self.proj_drop = nn.Dropout(proj_drop)
        self.sr_ratio = sr_ratio
        if sr_ratio > 1:
            self.sr = nn.Conv2d(dim, dim, kernel_size=sr_ratio, stride=sr_ratio)
            self.norm = nn.LayerNorm(dim)

    def attention(self, x: torch.Tensor, h: int, w: int) -> Tuple[torch.Tensor, torch.Tensor]:
        b, n, c = x.shape
        q = self.q(x).reshape(b, n, self.num_heads, c // self.num_heads).permute(0, 2, 1, 3)
        if self.sr_ratio > 1:
            x_ = map_to_tokens(self.sr(tokens_to_map(x, h, w)))
            x_ = self.norm(x_)
        else:
            x_ = x
        kv = self.kv(x_).reshape(b, -1, 2, self.num_heads, c // self.num_heads).permute(2, 0, 3, 1, 4)
        k, v = kv[0], kv[1]
        attn = ((q @ k.transpose(-2, -1)) * self.scale).softmax(dim=-1)
        out = (self.attn_drop(attn) @ v).transpose(1, 2).reshape(b, n, c)
        return self.proj_drop(self.proj(out)), attn

    def forward(self, x: torch.Tensor, h: int, w: int) -> torch.Tensor:
        return self.attention(x, h, w)[0]


class TransformerBlock(nn.Module):
    def __init__(self, dim: int, num_heads: int, mlp_ratio: float, sr_ratio: int, drop_path: float = 0.0):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim, eps=1e-6)
        self.attn = SpatialReductionAttention(dim, num_heads, sr_ratio)
        self.drop_path = DropPath(drop_path) if drop_path > 0.0 else nn.Identity()
        self.norm2 = nn.LayerNorm(dim, eps=1e-6)
        self.mlp = ConvFFN(dim, int(dim * mlp_ratio))

    def forward(self, x: torch.Tensor, h: int, w: int) -> torch.Tensor:
        x = x + self.drop_path(self.attn(self.norm1(x), h, w))
        return x + self.drop_path(self.mlp(self.norm2(x), h, w))


class OverlapPatchEmbed(nn.Module):
    def __init__(self, patch_size: int, stride: int, in_chans: int, embed_dim: int):
        super().__init__()
        self.proj = nn.Conv2d(in_chans, embed_dim, kernel_size=patch_size, stride=stride, padding=patch_size // 2)
        self.norm = nn.LayerNorm(embed_dim)

    def forward(self, x: torch.Tensor) -> Tuple[torch.Tensor, int, int]:
        x = self.proj(x)
        _, _, h, w = x.shape
        return self.norm(map_to_tokens(x)), h, w


class PVTStage(nn.Module):
    def __init__(self, patch_size: int, stride: int, in_chans: int, dim: int, depth: int,
                 num_heads: int, mlp_ratio: float, sr_ratio: int, drop_paths: Sequence[float]):
        super().__init__()
        self.patch_embed = OverlapPatchEmbed(patch_size, stride, in_chans, dim)
        self.blocks = nn.ModuleList(
            [TransformerBlock(dim, num_heads, mlp_ratio, sr_ratio, drop_paths[i]) for i in range(depth)]
        )
        self.norm = nn.LayerNorm(dim, eps=1e-6)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x, h, w = self.patch_embed(x)
        for blk in self.blocks:
            x = blk(x, h, w)
        return tokens_to_map(self.norm(x), h, w)


PVT_CONFIGS: Dict[str, Dict[str, tuple]] = {
    "b0": dict(dims=(32, 64, 160, 256), heads=(1, 2, 5, 8), mlp_ratios=(8, 8, 4, 4), depths=(2, 2, 2, 2)),
    "b1": dict(dims=(64, 128, 320, 512), heads=(1, 2, 5, 8), mlp_ratios=(8, 8, 4, 4), depths=(2, 2, 2, 2)),
    "b2": dict(dims=(64, 128, 320, 512), heads=(1, 2, 5, 8), mlp_ratios=(8, 8, 4, 4), depths=(3, 4, 6, 3)),
    "b3": dict(dims=(64, 128, 320, 512), heads=(1, 2, 5, 8), mlp_ratios=(8, 8, 4, 4), depths=(3, 4, 18, 3)),
    # head dim 64 as in B3, never fewer than one head
    "tiny": dict(dims=(16, 32, 64, 128), heads=(1, 1, 1, 2), mlp_ratios=(4, 4, 4, 4), depths=(1, 1, 1, 1)),
}
SR_RATIOS = (8, 4, 2, 1)


class PyramidVisionTransformer(Encoder):
    def __init__(self, variant: str = "b3", drop_path_rate: float = 0.1):
        super().__init__()
        if variant not in PVT_CONFIGS:
            raise RegistryError("pvtv2 variant", variant, PVT_CONFIGS)
        cfg = PVT_CONFIGS[variant]
        self.variant = variant
        self.stage_widths = tuple(cfg["dims"])
        dpr = [float(r) for r in torch.linspace(0, drop_path_rate, sum(cfg["depths"]))]
        stages, cur, in_chans = [], 0, 3
        for i in range(4):
            depth = cfg["depths"][i]
            stages.append(PVTStage(
                patch_size=7 if i == 0 else 3,
                stride=4 if i == 0 else 2,
                in_chans=in_chans,
                dim=cfg["dims"][i],
                depth=depth,
                num_heads=cfg["heads"][i],
                mlp_ratio=cfg["mlp_ratios"][i],
                sr_ratio=SR_RATIOS[i],
                drop_paths=dpr[cur:cur + depth],
            ))
            cur += depth
            in_chans = cfg["dims"][i]
        self.stages = nn.ModuleList(stages)
        self.apply(self._init_weights)

    @staticmethod
    def _init_weights(m: nn.Module) -> None:
        if isinstance(m, nn.Linear):
            trunc_normal_(m.weight, std=0.02)
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.LayerNorm):
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)
        elif isinstance(m, nn.Conv2d):
            fan_out = m.kernel_size[0] * m.kernel_size[1] * m.out_channels // m.groups
            m.weight.data.normal_(0, math.sqrt(2.0 / fan_out))
            if m.bias is not None:
                m.bias.data.zero_()

    def forward_stages(self, x: torch.Tensor) -> List[torch.Tensor]:
        outs = []
        for stage in self.stages:
            x = stage(x)
            outs.append(x)
        return outs


# -------------------- convolution backbones --------------------
class ResNetEncoder(Encoder):
    """torchvision ResNet50 without its classifier; post-activation stage outputs."""

    def __init__(self):
        super().__init__()
        net = resnet50(weights=None)
        self.stem = nn.Sequential(net.conv1, net.bn1, net.relu, net.maxpool)
        self.layer1, self.layer2, self.layer3, self.layer4 = net.layer1, net.layer2, net.layer3, net.layer4
        self.stage_widths = (256, 512, 1024, 2048)

    def forward_stages(self, x: torch.Tensor) -> List[torch.Tensor]:
        x = self.stem(x)
        outs = []
        for layer in (self.layer1, self.layer2, self.layer3, self.layer4):
            x = layer(x)
            outs.append(x)
        return outs


class TinyConvEncoder(Encoder):
    """A one-block-per-stage ResNet for desk-scale tests."""

    def __init__(self, widths: Sequence[int] = (16, 32, 64, 128)):
        super().__init__()
        self.stage_widths = tuple(widths)
        self.stem = nn.Sequential(
            nn.Conv2d(3, widths[0], 3, stride=2, padding=1, bias=False),
            nn.BatchNorm2d(widths[0]),
            nn.ReLU(inplace=True),
            nn.MaxPool2d(kernel_size=3, stride=2, padding=1),
        )
        layers, in_ch = [], widths[0]
        for i, out_ch in enumerate(widths):
            stride = 1 if i == 0 else 2
            downsample = None
            if stride != 1 or in_ch != out_ch:
                downsample = nn.Sequential(
                    nn.Conv2d(in_ch, out_ch, 1, stride=stride, bias=False), nn.BatchNorm2d(out_ch)
                )
            layers.append(BasicBlock(in_ch, out_ch, stride=stride, downsample=downsample))
            in_ch = out_ch
        self.layers = nn.ModuleList(layers)
        init_conv_fan_out(self)

    def forward_stages(self, x: torch.Tensor) -> List[torch.Tensor]:
        x = self.stem(x)
        outs = []
        for layer in self.layers:
            x = layer(x)
            outs.append(x)
        return outs


# -------------------- CoaT-Lite (external definition) --------------------
COAT_WIDTHS = {
    "mini": (64, 128, 320, 512),
    "small": (64, 128, 320, 512),
    "medium": (128, 256, 320, 512),
}
COAT_OUT_FEATURES = ("x1_nocls", "x2_nocls", "x3_nocls", "x4_nocls")


class CoaTEncoder(Encoder):
    """CoaT-Lite served through timm's definition; weights must come from a manifest."""

    def __init__(self, variant: str, weights_path: Optional[str], img_size: int = 352):
        super().__init__()
        if variant not in COAT_WIDTHS:
            raise RegistryError("coat_lite variant", variant, COAT_WIDTHS)
        if not weights_path:
            raise BackboneUnavailableError(
                f"coat_lite_{variant}: backbone requires external definition "
                "(set the encoder's `pretrained` path to a CoaT-Lite weight manifest)"
            )
        import timm

        self.net = timm.create_model(
            f"coat_lite_{variant}",
            pretrained=False,
            img_size=img_size,
            return_interm_layers=True,
            out_features=list(COAT_OUT_FEATURES),
        )
        load_pretrained(self.net, weights_path)
        self.stage_widths = COAT_WIDTHS[variant]

    def forward_stages(self, x: torch.Tensor) -> List[torch.Tensor]:
        feats = self.net.forward_features(x)
        return [feats[k] for k in COAT_OUT_FEATURES]


# -------------------- factory --------------------
BACKBONES = ("cb_e", "resnet50", "pvtv2", "tiny_vit", "tiny_conv", "coat_lite")


def _normalize(spec: EncoderSpec) -> Tuple[str, Optional[str]]:
    name = spec.name.lower().replace("-", "_")
    variant = spec.variant
    if name.startswith("coat_lite_") and variant is None:
        name, variant = "coat_lite", name[len("coat_lite_"):]
    if name.startswith("pvtv2_") and variant is None:
        name, variant = "pvtv2", name[len("pvtv2_"):]
    return name, (variant.lower() if variant else None)


def build_backbone(spec: EncoderSpec) -> Encoder:
    """
    Returns a randomly initialised encoder, or one loaded from `spec.pretrained`.
    Supports:
      - cb_e (width_mult scales the level widths)
      - resnet50
      - pvtv2 (variant b0..b3, default b3)
      - tiny_vit / tiny_conv
      - coat_lite (variant mini/small/medium; weights mandatory)
    """
    from models.branches import ConvBranchEncoder

    name, variant = _normalize(spec)

    if name == "cb_e":
        encoder: Encoder = ConvBranchEncoder(width_mult=spec.width_mult)
    elif name == "resnet50":
        encoder = ResNetEncoder()
    elif name == "pvtv2":
        encoder = PyramidVisionTransformer(variant or "b3")
    elif name == "tiny_vit":
        encoder = PyramidVisionTransformer("tiny", drop_path_rate=0.0)
    elif name == "tiny_conv":
        encoder = TinyConvEncoder()
    elif name == "coat_lite":
        return CoaTEncoder(variant or "mini", spec.pretrained, spec.img_size)
    else:
        raise RegistryError("backbone", spec.name, BACKBONES)

    if spec.pretrained:
        load_pretrained(encoder, spec.pretrained)
    return encoder
