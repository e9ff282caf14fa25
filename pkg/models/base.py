from typing import Dict, Optional, Tuple

from pydantic import BaseModel, ConfigDict

from common.errors import RegistryError
from models.backbones import EncoderSpec, build_backbone
from models.blocks import FuseDecoder, PredictionHead
from models.branches import ConvBranchDecoder, PLDPlus
from models.ensemble import EnsembleSegmenter


# -------------------- ASSEMBLY SPEC --------------------
class AssemblySpec(BaseModel):
    """One model row: two encoders plus which decoders/fusion are attached."""

    model_config = ConfigDict(extra="forbid")

    name: str
    encoder_1: EncoderSpec
    encoder_2: EncoderSpec
    decoder_1: bool = False
    decoder_2: bool = False
    fusion: bool = False
    decoder_width: int = 64  # LE / SFA
    cb_out_width: int = 32  # d1 channels
    branch_width: int = 64  # RB2 inside each fuse stage
    stage_width: int = 64  # F^j
    fuse_width: int = 64  # F
    head_width: int = 64

    def components(self) -> Tuple[str, str, str, str, str, str]:
        """Table-style labels (E1, E2, D1, D2, F, S); '' for an absent part."""
        return (
            _label(self.encoder_1),
            _label(self.encoder_2),
            "CB_D" if self.decoder_1 else "",
            "PLD+" if self.decoder_2 else "",
            "FD" if self.fusion else "",
            "PH",
        )


def _label(spec: EncoderSpec) -> str:
    name = spec.name
    if name == "cb_e":
        return "CB_E"
    if name == "resnet50":
        return "ResNet50"
    if name == "pvtv2":
        return f"PVTv2-{(spec.variant or 'b3').upper()}"
    if name == "coat_lite":
        return f"CoaT-Lite {(spec.variant or 'mini').capitalize()}"
    return name


def _row(name: str, e1: EncoderSpec, e2: EncoderSpec, **parts) -> AssemblySpec:
    return AssemblySpec(name=name, encoder_1=e1, encoder_2=e2, **parts)


CB_E = EncoderSpec(name="cb_e")
PVT_B3 = EncoderSpec(name="pvtv2", variant="b3")
TINY_CB_E = EncoderSpec(name="cb_e", width_mult=0.25)
TINY_VIT = EncoderSpec(name="tiny_vit")
TINY_WIDTHS = dict(decoder_width=16, cb_out_width=8, branch_width=16, stage_width=16, fuse_width=16, head_width=16)

MODEL_ROWS: Dict[str, AssemblySpec] = {
    r.name: r
    for r in (
        _row("fcbformer", CB_E, PVT_B3, decoder_1=True, decoder_2=True),
        _row("enformer", CB_E, PVT_B3, decoder_1=True, decoder_2=True, fusion=True),
        _row("enformer-lite-mini", CB_E, EncoderSpec(name="coat_lite", variant="mini"), fusion=True),
        _row("enformer-lite-small", CB_E, EncoderSpec(name="coat_lite", variant="small"), fusion=True),
        _row("enformer-lite-medium", CB_E, EncoderSpec(name="coat_lite", variant="medium"), fusion=True),
        _row("enformer-lite-large", EncoderSpec(name="resnet50"), EncoderSpec(name="coat_lite", variant="medium"),
             fusion=True),
        # CPU-sized stand-ins with the same wiring
        _row("tiny-fcbformer", TINY_CB_E, TINY_VIT, decoder_1=True, decoder_2=True, **TINY_WIDTHS),
        _row("tiny-enformer", TINY_CB_E, TINY_VIT, decoder_1=True, decoder_2=True, fusion=True, **TINY_WIDTHS),
        _row("tiny-enformer-lite", TINY_CB_E, TINY_VIT, fusion=True, **TINY_WIDTHS),
        _row("tiny-enformer-lite-large", EncoderSpec(name="tiny_conv"), TINY_VIT, fusion=True, **TINY_WIDTHS),
    )
}


# -------------------- FACTORY --------------------
def resolve_row(name: str) -> AssemblySpec:
    key = name.lower()
    if key not in MODEL_ROWS:
        raise RegistryError("model", name, MODEL_ROWS)
    return MODEL_ROWS[key]


def assemble(spec: AssemblySpec) -> EnsembleSegmenter:
    encoder_1 = build_backbone(spec.encoder_1)
    encoder_2 = build_backbone(spec.encoder_2)

    decoder_1 = ConvBranchDecoder(encoder_1.widths, spec.cb_out_width) if spec.decoder_1 else None
    decoder_2 = PLDPlus(encoder_2.stage_widths, spec.decoder_width) if spec.decoder_2 else None
    fusion = None
    if spec.fusion:
        fusion = FuseDecoder(
            encoder_1.stage_widths, encoder_2.stage_widths, spec.branch_width, spec.stage_width, spec.fuse_width
        )

    head_in = 0
    if decoder_1 is not None:
        head_in += decoder_1.out_width
    if decoder_2 is not None:
        head_in += decoder_2.out_channels
    if fusion is not None:
        head_in += fusion.out_channels
    head = PredictionHead(head_in, spec.head_width)

    return EnsembleSegmenter(encoder_1, encoder_2, head, decoder_1, decoder_2, fusion, name=spec.name)


def get_model(
    name: str,
    encoder_1_weights: Optional[str] = None,
    encoder_2_weights: Optional[str] = None,
    img_size: int = 352,
) -> EnsembleSegmenter:
    """
    Returns a freshly initialised model for a registry row.
    Supports:
      - fcbformer, enformer
      - enformer-lite-{mini,small,medium,large} (CoaT-Lite needs encoder_2_weights)
      - tiny-fcbformer, tiny-enformer, tiny-enformer-lite, tiny-enformer-lite-large
    """
    spec = resolve_row(name)
    spec = spec.model_copy(update={
        "encoder_1": spec.encoder_1.model_copy(update={"pretrained": encoder_1_weights, "img_size": img_size}),
        "encoder_2": spec.encoder_2.model_copy(update={"pretrained": encoder_2_weights, "img_size": img_size}),
    })
    return assemble(spec)
