"""Network-level contracts: construction determinism, bundle extraction
and blending, generator/discriminator shapes and ablation fallbacks, and
the injection instrumentation hook."""

import numpy as np
import pytest

from sketchstyle import tensor as T
from sketchstyle.config import ModelConfig, TrainConfig
from sketchstyle.errors import ContractError, ShapeError
from sketchstyle.layers import dmi_forward
from sketchstyle.models import (Discriminator, Generator, StyleBundle,
                                StyleEncoder, blend_styles, build_models,
                                extract_style)
from sketchstyle.tensor import Tensor, backward


def pretrained_encoder(seed=0, cfg=None):
    e = StyleEncoder(np.random.default_rng(seed), cfg or ModelConfig())
    e.trained = True  # weights random; enough for interface-level tests
    return e


def rand_images(rng, n=2, r=64):
    return Tensor(rng.uniform(-1, 1, (n, 3, r, r)).astype(np.float32))


def rand_sketch(rng, n=2, r=64):
    return Tensor((rng.random((n, 1, r, r)) > 0.85).astype(np.float32))


# ---------------------------------------------------------------------------
# construction and determinism
# ---------------------------------------------------------------------------

def test_build_models_is_seed_deterministic():
    g1, d1 = build_models(TrainConfig(seed=9))
    g2, d2 = build_models(TrainConfig(seed=9))
    g3, _ = build_models(TrainConfig(seed=10))
    assert g1.checksum() == g2.checksum() and d1.checksum() == d2.checksum()
    assert g1.checksum() != g3.checksum()


def test_ablation_flags_change_parameter_census():
    full_g, full_d = build_models(TrainConfig(seed=0))
    bare_g, bare_d = build_models(TrainConfig(seed=0, dmi=False, fmt=False, idn=False))
    full_names = {n for n, _ in full_g.named_parameters()}
    bare_names = {n for n, _ in bare_g.named_parameters()}
    assert any(n.startswith("dmi.") for n in full_names)
    assert not any(n.startswith("dmi.") for n in bare_names)
    assert any("idn" in n for n, _ in full_d.named_parameters())
    assert any("style_conv" in n for n, _ in bare_d.named_parameters())


def test_encoder_features_tap_resolutions_and_widths():
    cfg = ModelConfig()
    e = pretrained_encoder(cfg=cfg)
    vec, taps = e.features(rand_images(np.random.default_rng(0)))
    assert vec.data.shape == (2, cfg.style_dim)
    assert set(taps) == {64, 32, 16}
    assert taps[64].data.shape[1] == cfg.base_width
    assert taps[32].data.shape[1] == 2 * cfg.base_width
    assert taps[16].data.shape[1] == 4 * cfg.base_width


# ---------------------------------------------------------------------------
# style bundles
# ---------------------------------------------------------------------------

def test_extract_style_requires_training():
    e = StyleEncoder(np.random.default_rng(0), ModelConfig())
    with pytest.raises(ContractError):
        extract_style(e, rand_images(np.random.default_rng(1)))


def test_extract_style_is_deterministic_and_rowwise():
    e = pretrained_encoder()
    rng = np.random.default_rng(2)
    img = rand_images(rng, n=1)
    b1 = extract_style(e, img)
    b2 = extract_style(e, img)
    assert np.array_equal(b1.style_vec.data, b2.style_vec.data)
    for k in b1.feature_maps:
        assert np.array_equal(b1.feature_maps[k].data, b2.feature_maps[k].data)
    # duplicated image -> identical rows
    pair = Tensor(np.concatenate([img.data, img.data]))
    bp = extract_style(e, pair)
    assert np.array_equal(bp.style_vec.data[0], bp.style_vec.data[1])


def test_bundle_expand_broadcasts_single_image():
    e = pretrained_encoder()
    b = extract_style(e, rand_images(np.random.default_rng(3), n=1))
    b4 = b.expand(4)
    assert b4.style_vec.data.shape[0] == 4
    assert all(v.data.shape[0] == 4 for v in b4.feature_maps.values())
    with pytest.raises(ShapeError):
        extract_style(e, rand_images(np.random.default_rng(3), n=2)).expand(3)


def test_blend_single_bundle_and_degenerate_weights():
    e = pretrained_encoder()
    b = extract_style(e, rand_images(np.random.default_rng(4), n=1))
    same = blend_styles([b], [1.0])
    assert np.array_equal(same.style_vec.data, b.style_vec.data)
    assert np.array_equal(same.style_sketch.data, b.style_sketch.data)
    two = blend_styles([b, b], [0.3, 0.7])
    np.testing.assert_allclose(two.style_vec.data, b.style_vec.data, atol=1e-6)
    first = blend_styles([b, extract_style(e, rand_images(np.random.default_rng(5), n=1))],
                         [1.0, 0.0])
    assert np.array_equal(first.style_vec.data, b.style_vec.data)
    assert np.array_equal(first.style_sketch.data, b.style_sketch.data)


def test_blend_rejects_bad_weights():
    e = pretrained_encoder()
    b = extract_style(e, rand_images(np.random.default_rng(6), n=1))
    with pytest.raises(ContractError):
        blend_styles([])
    with pytest.raises(ContractError):
        blend_styles([b, b], [1.0, -0.5])
    with pytest.raises(ContractError):
        blend_styles([b, b], [0.0, 0.0])


# ---------------------------------------------------------------------------
# generator
# ---------------------------------------------------------------------------

def test_generator_output_shape_range_determinism():
    rng = np.random.default_rng(7)
    g, _ = build_models(TrainConfig(seed=1))
    e = pretrained_encoder()
    b = extract_style(e, rand_images(rng, n=2))
    sk = rand_sketch(rng, n=2)
    with T.no_grad():
        o1 = g(sk, b).data
        o2 = g(sk, b).data
    assert o1.shape == (2, 3, 64, 64)
    assert np.all(np.abs(o1) <= 1.0)
    assert np.array_equal(o1, o2)


def test_generator_rejects_bad_sketches():
    g, _ = build_models(TrainConfig(seed=1))
    e = pretrained_encoder()
    b = extract_style(e, rand_images(np.random.default_rng(8), n=1))
    with pytest.raises(ShapeError):
        g(Tensor(np.zeros((1, 1, 32, 32), np.float32)), b)
    with pytest.raises(ContractError):
        g(Tensor(np.full((1, 1, 64, 64), 0.5, np.float32)), b)


def test_generator_zero_sketch_hook_shows_plain_branch_only():
    rng = np.random.default_rng(9)
    g, _ = build_models(TrainConfig(seed=2))
    e = pretrained_encoder()
    b = extract_style(e, rand_images(rng, n=1))
    # make the two branches distinguishable
    for p in g.dmi.values():
        p.w_c.data[:] = 3.0
        p.b_c.data[:] = 0.25
        p.w_p.data[:] = 0.5
        p.b_p.data[:] = -0.75
    g.record_dmi = True
    with T.no_grad():
        g(Tensor(np.zeros((1, 1, 64, 64), np.float32)), b)
    assert sorted(res for res, _, _ in g.last_dmi) == sorted(g.dmi)
    for res, mask, pre in g.last_dmi:
        assert not mask.any()  # zero sketch -> zero mask at every resolution
        p = g.dmi[res]
        with T.no_grad():
            out = dmi_forward(Tensor(pre), Tensor(mask), p)
        # contour branch contributes only its bias field
        want = p.w_p.data * pre + p.b_p.data + p.b_c.data
        np.testing.assert_allclose(out.data, want, atol=1e-6)


def test_generator_fmt_off_uses_moment_transfer_fallback():
    rng = np.random.default_rng(10)
    g, _ = build_models(TrainConfig(seed=3, fmt=False))
    e = pretrained_encoder()
    b = extract_style(e, rand_images(rng, n=1))
    with T.no_grad():
        out = g(rand_sketch(rng, n=1), b).data
    assert out.shape == (1, 3, 64, 64)
    # fmt-off decoder convs are narrower (no concatenated transfer map)
    g_on, _ = build_models(TrainConfig(seed=3, fmt=True))
    assert (g.dec1.weight.data.shape[1] < g_on.dec1.weight.data.shape[1])


def test_generator_style_conditioning_changes_output():
    rng = np.random.default_rng(11)
    g, _ = build_models(TrainConfig(seed=4))
    e = pretrained_encoder()
    b1 = extract_style(e, rand_images(rng, n=1))
    b2 = extract_style(e, rand_images(rng, n=1))
    sk = rand_sketch(rng, n=1)
    with T.no_grad():
        assert not np.array_equal(g(sk, b1).data, g(sk, b2).data)


# ---------------------------------------------------------------------------
# discriminator
# ---------------------------------------------------------------------------

def test_discriminator_output_shapes_and_ranges():
    rng = np.random.default_rng(12)
    cfg = TrainConfig(seed=5)
    _, d = build_models(cfg)
    out = d(rand_images(rng, n=3))
    assert out.style_vec.data.shape == (3, cfg.model.style_dim)
    assert out.sketch_pred.data.shape == (3, 1, 64, 64)
    assert np.all((out.sketch_pred.data >= 0) & (out.sketch_pred.data <= 1))
    assert out.realness_logit.data.shape == (3, 1)
    with pytest.raises(ShapeError):
        d(Tensor(np.zeros((1, 1, 64, 64), np.float32)))


def test_discriminator_identical_inputs_identical_outputs():
    rng = np.random.default_rng(13)
    _, d = build_models(TrainConfig(seed=6))
    img = rand_images(rng, n=1)
    pair = Tensor(np.concatenate([img.data, img.data]))
    out = d(pair)
    np.testing.assert_array_equal(out.style_vec.data[0], out.style_vec.data[1])
    np.testing.assert_array_equal(out.sketch_pred.data[0], out.sketch_pred.data[1])
    np.testing.assert_array_equal(out.realness_logit.data[0], out.realness_logit.data[1])


def test_discriminator_content_tap_has_unit_variance_under_idn():
    rng = np.random.default_rng(14)
    _, d = build_models(TrainConfig(seed=7, idn=True))
    d(rand_images(rng, n=2))
    stds = d.last_content.data.std(axis=(2, 3))
    assert np.all(np.abs(stds - 1.0) < 1e-2)


def test_discriminator_naive_fallback_runs():
    rng = np.random.default_rng(15)
    _, d = build_models(TrainConfig(seed=8, idn=False))
    out = d(rand_images(rng, n=2))
    assert out.style_vec.data.shape == (2, 64)


def test_discriminator_head_gradients_spot_check():
    # finite differences at 5 random pixels for each head, rel err < 1e-2
    rng = np.random.default_rng(16)
    _, d = build_models(TrainConfig(seed=9))
    img = rand_images(rng, n=1)
    heads = {
        "realness": lambda o: o.realness_logit,
        "style": lambda o: T.narrow(o.style_vec, 1, 0, 4),
        "content": lambda o: T.narrow(T.narrow(o.sketch_pred, 2, 0, 2), 3, 0, 2),
    }
    h = 1e-3
    for name, pick in heads.items():
        x = Tensor(img.data.copy(), requires_grad=True)
        loss = T.tsum(pick(d(x)))
        backward(loss)
        ana = x.grad
        worst_scale = max(1.0, np.abs(ana).max())
        for _ in range(5):
            i = tuple(rng.integers(0, s) for s in x.data.shape)
            orig = x.data[i]
            x.data[i] = orig + h
            lp = T.tsum(pick(d(x))).item()
            x.data[i] = orig - h
            lm = T.tsum(pick(d(x))).item()
            x.data[i] = orig
            num = (lp - lm) / (2 * h)
            assert abs(ana[i] - num) / worst_scale < 1e-2, name


# ---------------------------------------------------------------------------
# gradient flow census
# ---------------------------------------------------------------------------

def test_generator_and_discriminator_gradients_flow_everywhere():
    rng = np.random.default_rng(17)
    cfg = TrainConfig(seed=10)
    g, d = build_models(cfg)
    e = pretrained_encoder()
    b = extract_style(e, rand_images(rng, n=2))
    sk = rand_sketch(rng, n=2)
    fake = g(sk, b)
    out = d(fake)
    loss = (T.bce_with_logits(out.realness_logit, Tensor(1.0))
            + T.mse(out.style_vec, b.style_vec)
            + T.mse(out.sketch_pred, sk))
    g.zero_grad()
    d.zero_grad()
    backward(loss)
    dead = [n for n, p in g.named_parameters() + d.named_parameters()
            if p.grad is None or not np.any(p.grad)]
    # DMI biases can cancel only when masks are degenerate; nothing else may be dead
    assert not dead, dead
