"""Layer contracts: mask handling, dual-mask injection, adaptive instance
re-normalization, instance de-normalization, the feature-map transfer
(checked against an independent literal reference), and the gated
residual block."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sketchstyle import tensor as T
from sketchstyle.config import FmtConfig
from sketchstyle.errors import ContractError, ShapeError
from sketchstyle.layers import (AttnResBlock, DmiParams, IdnPredictor, adain,
                                check_mask, dmi_forward, downsample_mask, fmt,
                                idn_forward)
from sketchstyle.tensor import Tensor


def rand(rng, *shape):
    return rng.uniform(-1, 1, shape).astype(np.float32)


def rand_mask(rng, n, size, p=0.2):
    return Tensor((rng.random((n, 1, size, size)) < p).astype(np.float32))


# ---------------------------------------------------------------------------
# masks
# ---------------------------------------------------------------------------

def test_check_mask_rejects_non_binary_and_bad_shape():
    with pytest.raises(ContractError):
        check_mask(Tensor(np.full((1, 1, 4, 4), 0.5, np.float32)))
    with pytest.raises(ShapeError):
        check_mask(Tensor(np.zeros((1, 2, 4, 4), np.float32)))


def test_downsample_mask_all_zero_and_single_pixel():
    z = Tensor(np.zeros((1, 1, 8, 8), np.float32))
    assert np.all(downsample_mask(z, (4, 4)).data == 0)
    one = np.zeros((1, 1, 8, 8), np.float32)
    one[0, 0, 0, 0] = 1.0
    out = downsample_mask(Tensor(one), (4, 4)).data
    assert out[0, 0, 0, 0] == 1.0 and out.sum() == 1.0


def test_downsample_mask_matches_any_nonzero_window_oracle():
    rng = np.random.default_rng(61)
    m = rand_mask(rng, 2, 16, p=0.1)
    out = downsample_mask(m, (4, 4)).data
    for n in range(2):
        for i in range(4):
            for j in range(4):
                want = float(m.data[n, 0, 4 * i:4 * i + 4, 4 * j:4 * j + 4].any())
                assert out[n, 0, i, j] == want


def test_downsample_mask_rejects_non_integer_factor():
    with pytest.raises(ContractError):
        downsample_mask(Tensor(np.zeros((1, 1, 10, 10), np.float32)), (4, 4))


# ---------------------------------------------------------------------------
# dual-mask injection
# ---------------------------------------------------------------------------

def test_dmi_identity_at_init_is_bit_exact():
    rng = np.random.default_rng(67)
    f = rand(rng, 2, 3, 8, 8)
    mask = rand_mask(rng, 2, 8, p=0.3)
    out = dmi_forward(Tensor(f), mask, DmiParams(3)).data
    assert np.array_equal(out, f)


def test_dmi_all_ones_mask_degenerates_plain_branch_to_bias():
    rng = np.random.default_rng(71)
    f = rand(rng, 1, 2, 4, 4)
    p = DmiParams(2)
    for q, v in zip((p.w_c, p.b_c, p.w_p, p.b_p), (2.0, 0.25, 9.0, -0.5)):
        q.data = np.full_like(q.data, v)
    out = dmi_forward(Tensor(f), Tensor(np.ones((1, 1, 4, 4), np.float32)), p).data
    np.testing.assert_allclose(out, 2.0 * f + 0.25 - 0.5, atol=1e-6)


def test_dmi_two_by_two_worked_example():
    f = np.array([[1.0, 2.0], [3.0, 4.0]], np.float32).reshape(1, 1, 2, 2)
    m = np.array([[1.0, 0.0], [0.0, 1.0]], np.float32).reshape(1, 1, 2, 2)
    p = DmiParams(1)
    p.w_c.data[:] = 2.0
    p.b_c.data[:] = 0.5
    p.w_p.data[:] = 0.5
    p.b_p.data[:] = -1.0
    out = dmi_forward(Tensor(f), Tensor(m), p).data
    np.testing.assert_allclose(out.reshape(2, 2), [[1.5, 0.5], [1.0, 7.5]], atol=1e-6)


def test_dmi_shape_errors():
    p = DmiParams(2)
    with pytest.raises(ShapeError):
        dmi_forward(Tensor(np.zeros((1, 2, 4, 4), np.float32)),
                    Tensor(np.zeros((1, 1, 8, 8), np.float32)), p)


# ---------------------------------------------------------------------------
# adaptive instance re-normalization
# ---------------------------------------------------------------------------

def test_adain_with_unit_moments_is_instance_norm():
    rng = np.random.default_rng(73)
    f = rand(rng, 2, 3, 8, 8)
    out = adain(Tensor(f),
                Tensor(np.zeros((2, 3, 1, 1), np.float32)),
                Tensor(np.ones((2, 3, 1, 1), np.float32))).data
    np.testing.assert_allclose(out.mean(axis=(2, 3)), 0.0, atol=1e-4)
    np.testing.assert_allclose(out.std(axis=(2, 3)), 1.0, atol=1e-4)


def test_adain_worked_four_value_channel():
    f = Tensor(np.array([1.0, 2.0, 3.0, 4.0], np.float32).reshape(1, 1, 1, 4))
    out = adain(f, Tensor(np.full((1, 1, 1, 1), 10.0, np.float32)),
                Tensor(np.full((1, 1, 1, 1), 2.0, np.float32))).data
    np.testing.assert_allclose(out.reshape(4),
                               [7.316718, 9.105573, 10.894427, 12.683282], atol=1e-4)


def test_adain_restoring_own_moments_is_identity():
    rng = np.random.default_rng(79)
    f = Tensor(rand(rng, 2, 3, 6, 6))
    mu, sigma = T.instance_stats(f)
    out = adain(f, mu, sigma).data
    np.testing.assert_allclose(out, f.data, atol=1e-4)


def test_adain_channel_mismatch_raises():
    with pytest.raises(ShapeError):
        adain(Tensor(np.zeros((1, 3, 4, 4), np.float32)),
              Tensor(np.zeros((1, 2, 1, 1), np.float32)),
              Tensor(np.ones((1, 2, 1, 1), np.float32)))


# ---------------------------------------------------------------------------
# instance de-normalization
# ---------------------------------------------------------------------------

@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_idn_output_has_unit_channel_variance(seed):
    rng = np.random.default_rng(seed)
    f = Tensor(rng.normal(0, 1 + rng.random() * 3, (2, 3, 8, 8)).astype(np.float32))
    pred = IdnPredictor(np.random.default_rng(seed + 1), 3, 8)
    _, sigma, content = idn_forward(f, pred)
    stds = content.data.std(axis=(2, 3))
    applies = sigma.data[..., 0, 0] > 1e-4
    assert np.all(np.abs(stds[applies] - 1.0) <= 1e-3)


def test_idn_with_true_mean_predictor_is_instance_norm():
    rng = np.random.default_rng(83)
    f = Tensor(rand(rng, 2, 3, 8, 8))
    true_mu, true_sigma = T.instance_stats(f)
    _, sigma, content = idn_forward(f, lambda x: true_mu)
    np.testing.assert_allclose(sigma.data, true_sigma.data, atol=1e-6)
    want = (f.data - true_mu.data) / (true_sigma.data + 1e-5)
    np.testing.assert_allclose(content.data, want, atol=1e-6)


def test_idn_recovers_style_scale_after_renormalization():
    # re-normalize f to known moments, then de-normalize with a predictor
    # frozen at those moments: recovered sigma = sigma_style*std(f)/(std(f)+eps)
    rng = np.random.default_rng(89)
    f = Tensor(rand(rng, 1, 2, 8, 8))
    mu_s = Tensor(np.array([0.5, -1.0], np.float32).reshape(1, 2, 1, 1))
    sig_s = Tensor(np.array([2.0, 0.7], np.float32).reshape(1, 2, 1, 1))
    styled = adain(f, mu_s, sig_s)
    _, sigma_pred, _ = idn_forward(styled, lambda x: mu_s)
    _, sig_f = T.instance_stats(f)
    want = sig_s.data * sig_f.data / (sig_f.data + 1e-5)
    np.testing.assert_allclose(sigma_pred.data, want, atol=1e-3)


def test_idn_predictor_output_shape():
    rng = np.random.default_rng(97)
    pred = IdnPredictor(rng, 4, 8)
    out = pred(Tensor(rand(rng, 2, 4, 8, 8)))
    assert out.data.shape == (2, 4, 1, 1)


# ---------------------------------------------------------------------------
# feature-map transfer, with an independent literal reference
# ---------------------------------------------------------------------------

def _ref_masked_max(v, m, kernel, stride):
    n, c, h, w = v.shape
    ho = (h - kernel) // stride + 1
    wo = (w - kernel) // stride + 1
    out = np.zeros((n, c, ho, wo))
    sel = np.zeros((n, c, ho, wo), dtype=bool)
    for ni in range(n):
        for ci in range(c):
            for i in range(ho):
                for j in range(wo):
                    vv = v[ni, ci, i * stride:i * stride + kernel,
                           j * stride:j * stride + kernel]
                    mm = m[ni, ci, i * stride:i * stride + kernel,
                           j * stride:j * stride + kernel]
                    if mm.any():
                        out[ni, ci, i, j] = vv[mm].max()
                        sel[ni, ci, i, j] = True
                    else:
                        out[ni, ci, i, j] = vv.max()
    return out, sel


def _ref_masked_adaptive(v, m, target):
    n, c, h, w = v.shape
    out = np.zeros((n, c, target, target))
    for ni in range(n):
        for ci in range(c):
            for i in range(target):
                for j in range(target):
                    h0, h1 = h * i // target, h * (i + 1) // target
                    w0, w1 = w * j // target, w * (j + 1) // target
                    vv = v[ni, ci, h0:h1, w0:w1]
                    mm = m[ni, ci, h0:h1, w0:w1]
                    out[ni, ci, i, j] = vv[mm].mean() if mm.any() else vv.mean()
    return out


def fmt_reference(f, style_sketch, input_sketch, pooled=4):
    """Literal five-step reference: split by the style sketch, run the
    masked pooling chain on each part, tile to full size, re-mask by the
    input sketch, sum.  All loops, float64."""
    f = f.astype(np.float64)
    n, c, h, _ = f.shape
    summaries = []
    for region in (style_sketch.astype(bool), ~style_sketch.astype(bool)):  # step 1
        v = f.copy()
        m = np.broadcast_to(region, f.shape).copy()
        while v.shape[2] > 10:                                              # step 2
            v, m = _ref_masked_max(v, m, 5, 3)
        summaries.append(_ref_masked_adaptive(v, m, pooled))
    factor = h // pooled                                                    # step 3
    tiled_c = summaries[0].repeat(factor, axis=2).repeat(factor, axis=3)
    tiled_p = summaries[1].repeat(factor, axis=2).repeat(factor, axis=3)
    mi = input_sketch.astype(np.float64)                                    # steps 4-5
    return (mi * tiled_c + (1.0 - mi) * tiled_p).astype(np.float32)


@pytest.mark.parametrize("res", [16, 32, 64])
def test_fmt_matches_literal_reference(res):
    rng = np.random.default_rng([101, res])
    for _ in range(5):
        f = rand(rng, 1, 2, res, res)
        sk_s = rand_mask(rng, 1, res, p=0.15)
        sk_i = rand_mask(rng, 1, res, p=0.15)
        got = fmt(Tensor(f), sk_s, sk_i, FmtConfig()).data
        want = fmt_reference(f, sk_s.data, sk_i.data)
        assert np.abs(got - want).max() < 1e-6


def test_fmt_constant_features_stay_constant_exactly():
    rng = np.random.default_rng(103)
    for const in (-0.6, 0.0, 0.123456, 1.0):
        f = np.full((1, 2, 32, 32), const, np.float32)
        out = fmt(Tensor(f), rand_mask(rng, 1, 32), rand_mask(rng, 1, 32)).data
        assert np.all(out == np.float32(const))


def test_fmt_all_zero_input_sketch_gives_tiled_plain_map():
    rng = np.random.default_rng(107)
    f = rand(rng, 1, 2, 16, 16)
    sk_s = rand_mask(rng, 1, 16, p=0.2)
    zeros = Tensor(np.zeros((1, 1, 16, 16), np.float32))
    out = fmt(Tensor(f), sk_s, zeros).data
    # every 4x4 tile is spatially constant (the plain summary value)
    tiles = out.reshape(1, 2, 4, 4, 4, 4)
    assert np.all(tiles == tiles[:, :, :, :1, :, :1])


def test_fmt_mask_partition_property():
    # output at contour positions comes from the tiled contour summary,
    # elsewhere from the plain summary; flipping the input sketch swaps them
    rng = np.random.default_rng(109)
    f = rand(rng, 1, 2, 16, 16)
    sk_s = rand_mask(rng, 1, 16, p=0.2)
    mi = rand_mask(rng, 1, 16, p=0.3)
    flipped = Tensor(1.0 - mi.data)
    a = fmt(Tensor(f), sk_s, mi).data
    b = fmt(Tensor(f), sk_s, flipped).data
    ones = fmt(Tensor(f), sk_s, Tensor(np.ones_like(mi.data))).data
    zeros = fmt(Tensor(f), sk_s, Tensor(np.zeros_like(mi.data))).data
    m = mi.data.astype(bool)
    assert np.array_equal(np.where(m, a, b), ones)
    assert np.array_equal(np.where(m, b, a), zeros)


def test_fmt_rejects_unconfigured_resolution_and_bad_masks():
    rng = np.random.default_rng(113)
    with pytest.raises(ContractError):
        fmt(Tensor(rand(rng, 1, 2, 8, 8)), rand_mask(rng, 1, 8), rand_mask(rng, 1, 8),
            FmtConfig(resolutions=(16,)))
    with pytest.raises(ContractError):
        fmt(Tensor(rand(rng, 1, 2, 16, 16)),
            Tensor(np.full((1, 1, 16, 16), 0.5, np.float32)),
            rand_mask(rng, 1, 16), FmtConfig())


def test_fmt_is_not_part_of_the_autodiff_graph():
    f = Tensor(np.zeros((1, 2, 16, 16), np.float32), requires_grad=True)
    rng = np.random.default_rng(127)
    out = fmt(f, rand_mask(rng, 1, 16), rand_mask(rng, 1, 16))
    assert not out.requires_grad


# ---------------------------------------------------------------------------
# gated residual block
# ---------------------------------------------------------------------------

def test_attn_block_gate_off_is_identity():
    rng = np.random.default_rng(131)
    block = AttnResBlock(np.random.default_rng(131), 4, 6)
    block.gate.weight.data[:] = 0.0
    block.gate.bias.data[:] = -20.0  # sigmoid -> ~2e-9
    f = rand(rng, 2, 4, 8, 8)
    out = block(Tensor(f), Tensor(rand(rng, 2, 6)))
    np.testing.assert_allclose(out.data, f, atol=1e-4)


def test_attn_block_gate_on_is_plain_residual_block():
    rng = np.random.default_rng(137)
    block = AttnResBlock(np.random.default_rng(137), 4, 6)
    block.gate.weight.data[:] = 0.0
    block.gate.bias.data[:] = 20.0  # sigmoid -> ~1
    f = Tensor(rand(rng, 2, 4, 8, 8))
    v = Tensor(rand(rng, 2, 6))
    out = block(f, v).data
    from sketchstyle.layers import _instance_norm
    h = block.conv2(T.leaky_relu(_instance_norm(block.conv1(f)), 0.2))
    np.testing.assert_allclose(out, f.data + h.data, atol=1e-4)


def test_attn_block_gate_modulates_between_extremes():
    rng = np.random.default_rng(139)
    block = AttnResBlock(np.random.default_rng(139), 4, 6)
    f = Tensor(rand(rng, 1, 4, 8, 8))
    v1 = Tensor(rand(rng, 1, 6))
    v2 = Tensor(rand(rng, 1, 6))
    assert not np.array_equal(block(f, v1).data, block(f, v2).data)


def test_attn_block_shape_errors():
    block = AttnResBlock(np.random.default_rng(0), 4, 6)
    with pytest.raises(ShapeError):
        block(Tensor(np.zeros((1, 3, 8, 8), np.float32)), Tensor(np.zeros((1, 6), np.float32)))
    with pytest.raises(ShapeError):
        block(Tensor(np.zeros((2, 4, 8, 8), np.float32)), Tensor(np.zeros((1, 6), np.float32)))
