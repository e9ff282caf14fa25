import numpy as np
import pytest
import torch
from torch.autograd import gradcheck

from common.errors import ShapeError
from models.blocks import (
    GSC,
    MLPBlock,
    RB,
    RB2,
    DecoderBlock,
    FuseDecoder,
    FuseStage,
    LocalEmphasis,
    PredictionHead,
    StepwiseAggregation,
    group_count,
    upsample,
)
from models.branches import PLDPlus
from oracles import bf_gsc


def _check(fn, *inputs):
    assert gradcheck(fn, inputs, eps=1e-6, atol=1e-6, rtol=1e-4)


def _x(*shape):
    return torch.randn(*shape, dtype=torch.float64, requires_grad=True)


def test_group_count():
    assert group_count(64) == 32
    assert group_count(16) == 16
    assert group_count(48) == 48
    assert group_count(40) == 40


def test_upsample_identity_and_size():
    x = torch.randn(2, 3, 8, 8)
    assert upsample(x, (8, 8)) is x
    assert upsample(x, (16, 24)).shape == (2, 3, 16, 24)
    with pytest.raises(ShapeError):
        upsample(x, (0, 4))


def test_gsc_shape_and_channel_check():
    gsc = GSC(4, 8)
    assert gsc(torch.randn(1, 4, 5, 5)).shape == (1, 8, 5, 5)
    with pytest.raises(ShapeError):
        gsc(torch.randn(1, 3, 5, 5))


def test_rb_projects_skip_only_when_widths_differ():
    assert isinstance(RB(8, 8).skip, torch.nn.Identity)
    assert isinstance(RB(4, 8).skip, torch.nn.Conv2d)
    assert RB(4, 8)(torch.randn(1, 4, 6, 6)).shape == (1, 8, 6, 6)


def test_decoder_block_rejects_spatial_mismatch():
    block = DecoderBlock(4, 4, 8)
    with pytest.raises(ShapeError):
        block(torch.randn(1, 4, 8, 8), torch.randn(1, 4, 4, 4))


def test_local_emphasis_and_sfa_land_on_quarter_grid():
    le = LocalEmphasis(8, 16)
    assert le(torch.randn(1, 8, 2, 2), (16, 16)).shape == (1, 16, 16, 16)
    sfa = StepwiseAggregation(16)
    maps = [torch.randn(1, 16, 16, 16) for _ in range(4)]
    assert sfa(*maps).shape == (1, 16, 16, 16)


def test_prediction_head_outputs_probabilities():
    head = PredictionHead(8, 16)
    p = head(torch.randn(2, 8, 16, 16) * 10, (64, 64))
    assert p.shape == (2, 1, 64, 64)
    assert torch.all((p > 0) & (p < 1))


# -------------------- gradient checks (float64, 1x4x4) --------------------
def test_gradcheck_gsc(double_precision):
    _check(GSC(4, 4), _x(1, 4, 4, 4))


def test_gradcheck_rb(double_precision):
    _check(RB(4, 8), _x(1, 4, 4, 4))


def test_gradcheck_decoder_block(double_precision):
    block = DecoderBlock(4, 4, 4)
    _check(block, _x(1, 4, 4, 4), _x(1, 4, 4, 4))


def test_gradcheck_mlp_block(double_precision):
    mlp = MLPBlock(4, 4).eval()
    _check(lambda x: mlp(x, (8, 8)), _x(1, 4, 4, 4))


def test_gradcheck_fuse_stage(double_precision):
    stage = FuseStage(4, 4, 4, 4).eval()
    _check(lambda a, b: stage(a, b, (4, 4)), _x(1, 4, 4, 4), _x(1, 4, 4, 4))


def test_gradcheck_prediction_head(double_precision):
    head = PredictionHead(4, 4)
    _check(lambda x: head(x, (8, 8)), _x(1, 4, 4, 4))


# -------------------- reference values --------------------
@pytest.mark.parametrize("channels", [4, 64])
def test_gsc_matches_loop_reference(channels):
    gsc = GSC(channels, 3)
    with torch.no_grad():
        gsc.norm.weight.normal_()
        gsc.norm.bias.normal_()
    x = torch.randn(2, channels, 5, 4)
    with torch.no_grad():
        out = gsc(x).double().numpy()
    np.testing.assert_allclose(out, bf_gsc(x, gsc), rtol=1e-4, atol=1e-5)


def test_gsc_of_constant_input_is_conv_bias():
    gsc = GSC(8, 5)
    with torch.no_grad():
        out = gsc(torch.full((1, 8, 6, 7), 3.7))
    expected = gsc.conv.bias.detach().view(1, 5, 1, 1).expand_as(out)
    assert torch.allclose(out, expected, atol=1e-6)


def _zero(conv):
    with torch.no_grad():
        conv.weight.zero_()
        if conv.bias is not None:
            conv.bias.zero_()


def test_rb_with_zeroed_output_conv_is_its_skip():
    x = torch.randn(2, 8, 6, 6)
    rb = RB(8, 8)
    _zero(rb.out_layers.conv)
    with torch.no_grad():
        assert torch.equal(rb(x), x)
    wide = RB(4, 8)
    _zero(wide.out_layers.conv)
    x4 = torch.randn(2, 4, 6, 6)
    with torch.no_grad():
        assert torch.allclose(wide(x4), wide.skip(x4))


def test_rb2_with_zeroed_output_convs_is_identity():
    x = torch.randn(1, 8, 5, 5)
    rb2 = RB2(8, 8)
    _zero(rb2.first.out_layers.conv)
    _zero(rb2.second.out_layers.conv)
    with torch.no_grad():
        assert torch.equal(rb2(x), x)


def test_mlp_output_is_nonnegative_before_and_after_upsampling():
    mlp = MLPBlock(6, 8)
    x = torch.randn(3, 6, 4, 4) * 5
    with torch.no_grad():
        projected = mlp.project(x)
        assert projected.shape == (3, 8, 4, 4)
        assert torch.all(projected >= 0)
        assert torch.all(mlp(x, (16, 16)) >= 0)


def test_head_is_one_by_one_and_monotone_in_bias():
    head = PredictionHead(4, 8)
    assert head.conv.kernel_size == (1, 1)
    assert tuple(head.conv.weight.shape) == (1, 8, 1, 1)
    x = torch.randn(2, 4, 8, 8)
    with torch.no_grad():
        low_logits, low = head.logits(x, (16, 16)), head(x, (16, 16))
        head.conv.bias += 0.5
        high_logits, high = head.logits(x, (16, 16)), head(x, (16, 16))
    assert torch.allclose(high_logits - low_logits, torch.full_like(low_logits, 0.5), atol=1e-5)
    assert torch.all(high > low)


# -------------------- composition with shared weights --------------------
def _twin(source, module):
    module.load_state_dict(source.state_dict())
    return module.eval()


def test_rb2_is_two_chained_rbs():
    rb2 = RB2(4, 8).eval()
    first, second = _twin(rb2.first, RB(4, 8)), _twin(rb2.second, RB(8, 8))
    x = torch.randn(2, 4, 6, 6)
    with torch.no_grad():
        assert torch.allclose(rb2(x), second(first(x)))


def test_sfa_chains_decoder_blocks_deepest_first():
    sfa = StepwiseAggregation(8).eval()
    d = [_twin(block, DecoderBlock(8, 8, 8)) for block in sfa.blocks]
    e1, e2, e3, e4 = (torch.randn(1, 8, 8, 8) for _ in range(4))
    with torch.no_grad():
        assert torch.allclose(sfa(e1, e2, e3, e4), d[2](d[1](d[0](e4, e3), e2), e1))
        assert not torch.allclose(sfa(e1, e2, e3, e4), sfa(e4, e3, e2, e1))


def test_fuse_decoder_is_mlp_over_concatenated_fuse_stages():
    widths_1, widths_2 = (4, 8, 8, 16), (8, 8, 16, 16)
    decoder = FuseDecoder(widths_1, widths_2, branch_width=8, stage_width=8, out_channels=8).eval()
    feats_1 = [torch.randn(1, w, 16 // 2 ** j, 16 // 2 ** j) for j, w in enumerate(widths_1)]
    feats_2 = [torch.randn(1, w, 16 // 2 ** j, 16 // 2 ** j) for j, w in enumerate(widths_2)]
    size = (16, 16)
    with torch.no_grad():
        stage_maps = []
        for stage, w1, w2, a, b in zip(decoder.stages, widths_1, widths_2, feats_1, feats_2):
            rb_1, rb_2 = _twin(stage.branch_1, RB2(w1, 8)), _twin(stage.branch_2, RB2(w2, 8))
            mlp = _twin(stage.mlp, MLPBlock(16, 8))
            stage_maps.append(mlp(torch.cat([rb_1(a), rb_2(b)], dim=1), size))
        expected = _twin(decoder.mlp, MLPBlock(32, 8))(torch.cat(stage_maps, dim=1), size)
        assert torch.allclose(decoder(feats_1, feats_2, size), expected, atol=1e-6)


def test_pld_plus_is_sfa_over_local_emphasis():
    widths = (4, 8, 16, 16)
    pld = PLDPlus(widths, 8).eval()
    les = [_twin(le, LocalEmphasis(w, 8)) for le, w in zip(pld.le, widths)]
    sfa = _twin(pld.sfa, StepwiseAggregation(8))
    feats = [torch.randn(1, w, 8 // 2 ** j, 8 // 2 ** j) for j, w in enumerate(widths)]
    with torch.no_grad():
        expected = sfa(*[le(f, (8, 8)) for le, f in zip(les, feats)])
        assert torch.allclose(pld(feats, (8, 8)), expected, atol=1e-6)
