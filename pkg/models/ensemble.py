"""
Two-encoder segmenters: the stacking baseline (FCBFormer), EnFormer and
EnFormer-Lite all share one module whose optional parts decide the
composition.

    stacking   P = S(d1, d2)
    enformer   P = S(d1, d2, F([e_i^j]))
    lite       P = S(F([e_i^j]))

When decoders are present every head input is resized to full resolution and
concatenated in the order d1, d2, F. Without decoders the head upsamples the
H/4 fused map itself.
"""
from dataclasses import dataclass, field
from typing import List, Optional

import pandas as pd
import torch
import torch.nn as nn

from common.errors import ShapeError
from models.backbones import Encoder, check_image
from models.blocks import FuseDecoder, PredictionHead, stride_size, upsample
from models.branches import ConvBranchDecoder, ConvBranchEncoder, PLDPlus, conv_branch_encode

COMPONENTS = ("encoder_1", "encoder_2", "decoder_1", "decoder_2", "fusion", "head")


@dataclass
class Trace:
    """Every intermediate of one forward pass, for inspection and panels."""

    e1: List[torch.Tensor]
    e2: List[torch.Tensor]
    skips: Optional[List[torch.Tensor]] = None
    d1: Optional[torch.Tensor] = None
    d2: Optional[torch.Tensor] = None
    fuse_stages: List[torch.Tensor] = field(default_factory=list)
    f: Optional[torch.Tensor] = None
    head_input: Optional[torch.Tensor] = None
    prob: Optional[torch.Tensor] = None


class EnsembleSegmenter(nn.Module):
    def __init__(
        self,
        encoder_1: Encoder,
        encoder_2: Encoder,
        head: PredictionHead,
        decoder_1: Optional[ConvBranchDecoder] = None,
        decoder_2: Optional[PLDPlus] = None,
        fusion: Optional[FuseDecoder] = None,
        name: str = "ensemble",
    ):
        super().__init__()
        if decoder_1 is None and decoder_2 is None and fusion is None:
            raise ShapeError("An assembly needs at least one decoder or a fuse decoder")
        if decoder_1 is not None and not isinstance(encoder_1, ConvBranchEncoder):
            raise ShapeError("decoder_1 (CB_D) needs the CB_E skip set; encoder_1 is not a conv branch")
        self.name = name
        self.encoder_1 = encoder_1
        self.encoder_2 = encoder_2
        self.decoder_1 = decoder_1
        self.decoder_2 = decoder_2
        self.fusion = fusion
        self.head = head

    @property
    def kind(self) -> str:
        has_decoders = self.decoder_1 is not None or self.decoder_2 is not None
        if self.fusion is None:
            return "stacking"
        return "enformer" if has_decoders else "lite"

    def trace(self, image: torch.Tensor) -> Trace:
        check_image(image)
        full = tuple(image.shape[-2:])
        quarter = stride_size(full, 4)

        if self.decoder_1 is not None:
            e1, skips = conv_branch_encode(self.encoder_1, image)
        else:
            e1, skips = self.encoder_1(image), None
        e2 = self.encoder_2(image)
        t = Trace(e1=e1, e2=e2, skips=skips)

        if self.decoder_1 is not None:
            t.d1 = self.decoder_1(skips)
        if self.decoder_2 is not None:
            t.d2 = self.decoder_2(e2, quarter)
        if self.fusion is not None:
            t.fuse_stages = self.fusion.forward_stages(e1, e2, quarter)
            t.f = self.fusion.fuse(t.fuse_stages, quarter)

        if self.kind == "lite":
            t.head_input = t.f
        else:
            parts = [upsample(m, full) for m in (t.d1, t.d2, t.f) if m is not None]
            t.head_input = torch.cat(parts, dim=1)
        t.prob = self.head(t.head_input, full)
        return t

    def forward(self, image: torch.Tensor) -> torch.Tensor:
        return self.trace(image).prob


def enformer_forward(model: EnsembleSegmenter, image: torch.Tensor) -> torch.Tensor:
    if model.kind != "enformer":
        raise ShapeError(f"{model.name} is a {model.kind} assembly; EnFormer needs both decoders and a fuse decoder")
    return model(image)


def enformer_lite_forward(model: EnsembleSegmenter, image: torch.Tensor) -> torch.Tensor:
    if model.kind != "lite":
        raise ShapeError(f"{model.name} is a {model.kind} assembly; EnFormer-Lite needs a fuse decoder and no decoders")
    return model(image)


def count_parameters(module: Optional[nn.Module]) -> int:
    if module is None:
        return 0
    return sum(p.numel() for p in module.parameters())


def parameter_report(model: EnsembleSegmenter) -> pd.DataFrame:
    """Per-component parameter counts; the last row is the total."""
    rows = [{"component": c, "parameters": count_parameters(getattr(model, c))} for c in COMPONENTS]
    rows.append({"component": "total", "parameters": sum(r["parameters"] for r in rows)})
    return pd.DataFrame(rows)
