"""The model's differentiable building blocks: dual-mask injection,
adaptive instance re-normalization, instance de-normalization, the
parameter-free feature-map transformation, and the style-gated residual
block.

Masks are [N, 1, H, W] tensors with values in {0, 1}; 1 marks a contour
pixel.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import tensor as T
from .config import FmtConfig
from .errors import ContractError, ShapeError
from .nn import Conv2d, Linear, Module
from .tensor import Parameter, Tensor

EPS = 1e-5


def check_mask(mask: Tensor, name: str = "mask"):
    d = mask.data
    if d.ndim != 4 or d.shape[1] != 1:
        raise ShapeError(f"{name}: expected [N,1,H,W], got {d.shape}")
    if not np.all((d == 0.0) | (d == 1.0)):
        raise ContractError(f"{name}: values must be binary 0/1")


def downsample_mask(sketch: Tensor, target) -> Tensor:
    """Any-contour-pixel downsampling: a coarse cell is 1 iff its window
    contains at least one contour pixel."""
    check_mask(sketch, "sketch")
    th, tw = target
    n, _, h, w = sketch.data.shape
    if h % th or w % tw:
        raise ContractError(f"downsample_mask: {h}x{w} not an integer multiple of {th}x{tw}")
    fh, fw = h // th, w // tw
    if fh == 1 and fw == 1:
        return Tensor(sketch.data.copy())
    blocks = sketch.data.reshape(n, 1, th, fh, tw, fw)
    return Tensor((blocks.max(axis=(3, 5)) > 0).astype(np.float32))


# ---------------------------------------------------------------------------
# Dual-Mask Injection
# ---------------------------------------------------------------------------

class DmiParams(Module):
    """Per-channel affine pairs for the contour and plain branches.
    Initialized to the identity (w=1, b=0)."""

    def __init__(self, channels: int):
        shape = (channels, 1, 1)
        self.w_c = Parameter(np.ones(shape, dtype=np.float32))
        self.b_c = Parameter(np.zeros(shape, dtype=np.float32))
        self.w_p = Parameter(np.ones(shape, dtype=np.float32))
        self.b_p = Parameter(np.zeros(shape, dtype=np.float32))


def dmi_forward(f: Tensor, mask: Tensor, p: DmiParams) -> Tensor:
    """Split ``f`` into contour/plain parts by ``mask`` and relocate each
    with its own per-channel affine; identical to ``f`` at w=1, b=0."""
    check_mask(mask)
    if f.data.ndim != 4:
        raise ShapeError(f"dmi: feature must be 4-D, got {f.data.shape}")
    if mask.data.shape[2:] != f.data.shape[2:]:
        raise ShapeError(
            f"dmi: mask spatial {mask.data.shape[2:]} != feature spatial {f.data.shape[2:]}")
    f_c = T.mul(mask, f)
    f_p = T.mul(T.sub(T.Tensor(1.0), mask), f)
    out_c = T.add(T.mul(p.w_c, f_c), p.b_c)
    out_p = T.add(T.mul(p.w_p, f_p), p.b_p)
    return T.add(out_c, out_p)


# ---------------------------------------------------------------------------
# AdaIN and Instance De-Normalization
# ---------------------------------------------------------------------------

def adain(f: Tensor, mu_style: Tensor, sigma_style: Tensor, eps: float = EPS) -> Tensor:
    """Re-normalize ``f`` to the supplied per-channel moments."""
    if mu_style.data.shape[1] != f.data.shape[1]:
        raise ShapeError(
            f"adain: style channels {mu_style.data.shape[1]} != feature channels {f.data.shape[1]}")
    mu, sigma = T.instance_stats(f)
    normed = T.div(T.sub(f, mu), T.add(sigma, T.Tensor(eps)))
    return T.add(T.mul(sigma_style, normed), mu_style)


class IdnPredictor(Module):
    """Two-conv style-mean predictor: strided 3x3, then a global-kernel
    conv collapsing the remaining spatial extent to 1x1."""

    def __init__(self, rng, channels: int, spatial: int):
        self.conv1 = Conv2d(rng, channels, channels, 3, stride=2, padding=1)
        mid = (spatial + 1) // 2
        self.conv2 = Conv2d(rng, channels, channels, mid)

    def __call__(self, f: Tensor) -> Tensor:
        return self.conv2(T.leaky_relu(self.conv1(f), 0.2))


def idn_forward(f_styled: Tensor, predictor: IdnPredictor, eps: float = EPS):
    """Predict per-channel style moments and divide them out.

    Returns (mu_pred, sigma_pred, f_content); f_content has unit
    per-channel variance by construction whenever sigma_pred dominates eps.
    """
    mu_pred = predictor(f_styled)
    centered = T.sub(f_styled, mu_pred)
    _, sigma_pred = T.instance_stats(centered)
    f_content = T.div(centered, T.add(sigma_pred, T.Tensor(eps)))
    return mu_pred, sigma_pred, f_content


# ---------------------------------------------------------------------------
# Feature-Map Transformation
# ---------------------------------------------------------------------------

def _masked_max_stage(v, sel, kernel, stride):
    """Masked max-pool: max over selected positions per window; windows
    with no selected position fall back to the plain window max."""
    vw = sliding_window_view(v, (kernel, kernel), axis=(2, 3))[:, :, ::stride, ::stride]
    sw = sliding_window_view(sel, (kernel, kernel), axis=(2, 3))[:, :, ::stride, ::stride]
    any_sel = sw.any(axis=(4, 5))
    masked = np.where(sw, vw, -np.inf)
    out = np.where(any_sel, masked.max(axis=(4, 5)), vw.max(axis=(4, 5)))
    return out, any_sel


def _masked_adaptive_avg(v, sel, out_size):
    """Masked adaptive average: mean over selected positions per cell,
    falling back to the plain cell mean when none are selected.
    Accumulates in float64 so constant inputs are preserved exactly."""
    n, c, h, w = v.shape
    hb = [(h * i // out_size, h * (i + 1) // out_size) for i in range(out_size)]
    wb = [(w * j // out_size, w * (j + 1) // out_size) for j in range(out_size)]
    out = np.empty((n, c, out_size, out_size), dtype=np.float64)
    for i, (h0, h1) in enumerate(hb):
        for j, (w0, w1) in enumerate(wb):
            block = v[:, :, h0:h1, w0:w1].astype(np.float64)
            m = sel[:, :, h0:h1, w0:w1]
            cnt = m.sum(axis=(2, 3))
            s = np.where(m, block, 0.0).sum(axis=(2, 3))
            full = block.mean(axis=(2, 3))
            out[:, :, i, j] = np.where(cnt > 0, s / np.maximum(cnt, 1), full)
    return out


def _pooled_summary(f, sel, cfg: FmtConfig):
    """Run the masked pooling chain down to a pooled_size^2 summary map."""
    v = f.astype(np.float64)
    sel = np.broadcast_to(sel.astype(bool), v.shape)
    size = v.shape[2]
    while size > 10:
        v, sel = _masked_max_stage(v, sel, 5, 3)
        size = v.shape[2]
    return _masked_adaptive_avg(v, sel, cfg.pooled_size)


def fmt(f_style: Tensor, style_sketch: Tensor, input_sketch: Tensor,
        cfg: FmtConfig | None = None) -> Tensor:
    """Transfer the style feature map onto the input sketch's layout:
    split by the style sketch, pool each part to a 4x4 summary, tile back
    to full size, re-mask by the input sketch, and sum.

    Parameter-free and non-differentiable: its input comes from the frozen
    feature extractor, so no gradient is required upstream.
    """
    cfg = cfg or FmtConfig()
    check_mask(style_sketch, "style_sketch")
    check_mask(input_sketch, "input_sketch")
    f = f_style.data
    if f.ndim != 4:
        raise ShapeError(f"fmt: feature must be 4-D, got {f.shape}")
    n, c, h, w = f.shape
    if h != w or h not in cfg.resolutions:
        raise ContractError(f"fmt: resolution {h}x{w} not configured ({cfg.resolutions})")
    for m, name in ((style_sketch, "style_sketch"), (input_sketch, "input_sketch")):
        if m.data.shape[2:] != (h, w):
            raise ShapeError(f"fmt: {name} spatial {m.data.shape[2:]} != feature {h}x{w}")
    if h % cfg.pooled_size:
        raise ContractError(f"fmt: resolution {h} not tileable from {cfg.pooled_size}")

    ms = style_sketch.data.astype(bool)
    contour = _pooled_summary(f, ms, cfg)
    plain = _pooled_summary(f, ~ms, cfg)
    factor = h // cfg.pooled_size
    tiled_c = contour.repeat(factor, axis=2).repeat(factor, axis=3)
    tiled_p = plain.repeat(factor, axis=2).repeat(factor, axis=3)
    mi = input_sketch.data.astype(np.float64)
    out = mi * tiled_c + (1.0 - mi) * tiled_p
    return Tensor(out.astype(np.float32))


# ---------------------------------------------------------------------------
# style-gated residual block
# ---------------------------------------------------------------------------

def _instance_norm(f: Tensor, eps: float = EPS) -> Tensor:
    mu, sigma = T.instance_stats(f)
    return T.div(T.sub(f, mu), T.add(sigma, T.Tensor(eps)))


class AttnResBlock(Module):
    """Residual block whose residual branch is channel-gated by a sigmoid
    projection of the style vector."""

    def __init__(self, rng, channels: int, style_dim: int):
        self.conv1 = Conv2d(rng, channels, channels, 3, padding=1)
        self.conv2 = Conv2d(rng, channels, channels, 3, padding=1)
        self.gate = Linear(rng, style_dim, channels)
        self.channels = channels

    def __call__(self, f: Tensor, v_style: Tensor) -> Tensor:
        if f.data.shape[1] != self.channels:
            raise ShapeError(
                f"attn_res_block: feature channels {f.data.shape[1]} != {self.channels}")
        if v_style.data.ndim != 2 or v_style.data.shape[0] != f.data.shape[0]:
            raise ShapeError(
                f"attn_res_block: style vector shape {v_style.data.shape} "
                f"incompatible with batch {f.data.shape[0]}")
        h = self.conv2(T.leaky_relu(_instance_norm(self.conv1(f)), 0.2))
        w = T.sigmoid(self.gate(v_style))
        n, c = w.data.shape
        w = T.reshape(w, (n, c, 1, 1))
        return T.add(f, T.mul(w, h))


def attn_res_block(f: Tensor, v_style: Tensor, block: AttnResBlock) -> Tensor:
    return block(f, v_style)
