import pytest
import torch
from torch.autograd import gradcheck

from common.errors import BackboneUnavailableError, IntegrityError, RegistryError, ShapeError
from models.backbones import (
    PVT_CONFIGS,
    STAGE_STRIDES,
    EncoderSpec,
    SpatialReductionAttention,
    build_backbone,
    encode,
    map_to_tokens,
    tokens_to_map,
)
from models.branches import ConvBranchDecoder, ConvBranchEncoder, PLDPlus, conv_branch_encode, scaled_widths
from models.weights import decode_manifest, encode_manifest, load_pretrained, state_dict_to_arrays, write_manifest


def _stages_ok(feats, widths, size):
    assert len(feats) == 4
    for f, w, stride in zip(feats, widths, STAGE_STRIDES):
        assert f.shape == (1, w, size // stride, size // stride)


@pytest.mark.parametrize("spec", [
    EncoderSpec(name="cb_e", width_mult=0.25),
    EncoderSpec(name="tiny_vit"),
    EncoderSpec(name="tiny_conv"),
    EncoderSpec(name="pvtv2", variant="b0"),
])
def test_four_stage_contract(spec):
    enc = build_backbone(spec).eval()
    with torch.no_grad():
        _stages_ok(encode(enc, torch.randn(1, 3, 64, 64)), enc.stage_widths, 64)


def test_resnet50_stage_widths():
    enc = build_backbone(EncoderSpec(name="resnet50")).eval()
    assert enc.stage_widths == (256, 512, 1024, 2048)
    with torch.no_grad():
        _stages_ok(enc(torch.randn(1, 3, 64, 64)), enc.stage_widths, 64)


def test_pvt_variant_names():
    assert set(PVT_CONFIGS) >= {"b0", "b1", "b2", "b3"}
    enc = build_backbone(EncoderSpec(name="pvtv2_b1"))
    assert enc.stage_widths == (64, 128, 320, 512)


def test_unknown_backbone_lists_valid_names():
    with pytest.raises(RegistryError) as exc:
        build_backbone(EncoderSpec(name="vgg16"))
    assert "pvtv2" in str(exc.value) and "cb_e" in str(exc.value)


def test_coat_without_weights_is_unavailable():
    with pytest.raises(BackboneUnavailableError, match="external definition"):
        build_backbone(EncoderSpec(name="coat_lite", variant="mini"))


def test_image_size_must_be_multiple_of_32():
    enc = build_backbone(EncoderSpec(name="tiny_conv"))
    with pytest.raises(ShapeError):
        enc(torch.randn(1, 3, 48, 48))
    with pytest.raises(ShapeError):
        enc(torch.randn(1, 1, 64, 64))


def test_conv_branch_skips_and_decoder():
    enc = ConvBranchEncoder(width_mult=0.25)
    assert enc.widths == scaled_widths(0.25) == (4, 8, 16, 32, 64, 128)
    stages, skips = conv_branch_encode(enc, torch.randn(1, 3, 64, 64))
    assert [s.shape[-1] for s in skips] == [64, 32, 16, 8, 4, 2]
    assert all(a is b for a, b in zip(stages, skips[2:]))
    dec = ConvBranchDecoder(enc.widths, out_width=8)
    assert dec(skips).shape == (1, 8, 64, 64)
    with pytest.raises(ShapeError):
        dec(skips[:5])


def test_pld_plus_output():
    pld = PLDPlus((16, 32, 64, 128), width=16)
    feats = [torch.randn(1, w, 64 // s, 64 // s) for w, s in zip((16, 32, 64, 128), (4, 8, 16, 32))]
    assert pld(feats, (16, 16)).shape == (1, 16, 16, 16)


# -------------------- transformer internals --------------------
def test_token_map_round_trip_is_row_major():
    m = torch.randn(2, 5, 3, 4)
    tokens = map_to_tokens(m)
    assert tokens.shape == (2, 12, 5)
    assert torch.equal(tokens[:, 1 * 4 + 2], m[:, :, 1, 2])
    assert torch.equal(tokens_to_map(tokens, 3, 4), m)


@pytest.mark.parametrize("sr_ratio,keys", [(1, 64), (2, 16), (4, 4)])
def test_attention_rows_are_distributions(sr_ratio, keys):
    sra = SpatialReductionAttention(16, num_heads=2, sr_ratio=sr_ratio).eval()
    with torch.no_grad():
        out, attn = sra.attention(torch.randn(2, 64, 16) * 3, 8, 8)
    assert out.shape == (2, 64, 16)
    assert attn.shape == (2, 2, 64, keys)
    assert torch.all(attn >= 0)
    assert torch.allclose(attn.sum(dim=-1), torch.ones(2, 2, 64), atol=1e-6)


# -------------------- convolution branch --------------------
def test_conv_branch_with_zeroed_residuals_is_skip_chain():
    enc = ConvBranchEncoder(width_mult=0.25).eval()
    with torch.no_grad():
        for level in enc.levels:
            for rb in level:
                rb.out_layers.conv.weight.zero_()
                rb.out_layers.conv.bias.zero_()
        x = torch.randn(1, 3, 64, 64)
        _, skips = enc.forward_with_skips(x)

        h = enc.stem(x)
        assert torch.equal(skips[0], h)
        for i, level in enumerate(enc.levels):
            for rb in level:
                h = rb.skip(h)
            assert torch.allclose(skips[i], h, atol=1e-6)
            if i < len(enc.downs):
                h = enc.downs[i](h)


def test_gradcheck_conv_branch_decoder(double_precision):
    dec = ConvBranchDecoder((2,) * 6, out_width=2)
    sizes = (4, 4, 2, 2, 2, 2)
    skips = [torch.randn(1, 2, s, s, dtype=torch.float64, requires_grad=True) for s in sizes]
    assert gradcheck(lambda *s: dec(list(s)), skips, eps=1e-6, atol=1e-6, rtol=1e-4)


# -------------------- weight manifests --------------------
def test_pretrained_roundtrip(tmp_path):
    src = build_backbone(EncoderSpec(name="tiny_vit"))
    path = str(tmp_path / "tiny_vit.enfw")
    write_manifest(path, state_dict_to_arrays(src))
    dst = build_backbone(EncoderSpec(name="tiny_vit", pretrained=path))
    for k, v in src.state_dict().items():
        assert torch.equal(v, dst.state_dict()[k])


def test_pretrained_shape_mismatch(tmp_path):
    src = build_backbone(EncoderSpec(name="tiny_vit"))
    arrays = state_dict_to_arrays(src)
    key = next(iter(arrays))
    arrays[key] = arrays[key].reshape(-1)[:-1].copy()
    path = str(tmp_path / "bad.enfw")
    write_manifest(path, arrays)
    with pytest.raises(ShapeError, match=key):
        build_backbone(EncoderSpec(name="tiny_vit", pretrained=path))


def test_pretrained_missing_keys_warn(tmp_path):
    src = build_backbone(EncoderSpec(name="tiny_conv"))
    arrays = state_dict_to_arrays(src)
    arrays.pop(next(iter(arrays)))
    path = str(tmp_path / "partial.enfw")
    write_manifest(path, arrays)
    with pytest.warns(UserWarning, match="not in manifest"):
        load_pretrained(build_backbone(EncoderSpec(name="tiny_conv")), path)


def test_corrupt_manifest():
    blob = encode_manifest({"w": torch.ones(3, 2)})
    assert decode_manifest(blob)["w"].shape == (3, 2)
    with pytest.raises(IntegrityError):
        decode_manifest(blob[:-3])
    with pytest.raises(IntegrityError):
        decode_manifest(b"XXXX" + blob[4:])
