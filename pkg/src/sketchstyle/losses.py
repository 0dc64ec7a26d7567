"""Training objectives: the GAN loss pair with auxiliary style/content
terms, paired reconstruction, and the patched image-gradient matching
loss."""

from __future__ import annotations

from dataclasses import dataclass

from . import tensor as T
from .config import LossWeights
from .errors import ContractError, ShapeError
from .tensor import Tensor


@dataclass
class DiscriminatorOutput:
    style_vec: Tensor      # [N, S]
    sketch_pred: Tensor    # [N, 1, H, W], in [0, 1]
    realness_logit: Tensor  # [N, 1]


def d_loss(out_real: DiscriminatorOutput, out_fake: DiscriminatorOutput,
           style_target: Tensor, sketch_target: Tensor) -> Tensor:
    """Realness BCE on real and fake plus style/content MSE on real only."""
    real_term = T.bce_with_logits(out_real.realness_logit, Tensor(1.0))
    fake_term = T.bce_with_logits(out_fake.realness_logit, Tensor(0.0))
    style_term = T.mse(out_real.style_vec, style_target)
    content_term = T.mse(out_real.sketch_pred, sketch_target)
    return real_term + fake_term + style_term + content_term


def g_loss(out_fake: DiscriminatorOutput, e_style_of_ref: Tensor, sketch_in: Tensor,
           generated: Tensor, style_img: Tensor, paired: bool, w: LossWeights) -> Tensor:
    """Non-saturating adversarial term plus the auxiliary objectives.

    Reconstruction only applies to paired inputs.  The gradient-matching
    term targets the style image's gradient statistics and applies to
    both paired and unpaired inputs whenever shapes admit it.
    """
    if paired and generated.data.shape != style_img.data.shape:
        raise ShapeError(
            f"g_loss: paired shapes differ {generated.data.shape} vs {style_img.data.shape}")
    loss = T.mul(Tensor(w.adv), T.bce_with_logits(out_fake.realness_logit, Tensor(1.0)))
    if w.content:
        loss = loss + T.mul(Tensor(w.content), T.mse(out_fake.sketch_pred, sketch_in))
    if w.style:
        loss = loss + T.mul(Tensor(w.style), T.mse(out_fake.style_vec, e_style_of_ref))
    if paired and w.recon:
        loss = loss + T.mul(Tensor(w.recon), T.mse(generated, style_img))
    if w.grad and generated.data.shape == style_img.data.shape:
        loss = loss + T.mul(Tensor(w.grad), gradient_match(generated, style_img))
    return loss


def _forward_diffs(x: Tensor):
    """Forward differences along x and y, truncated to a common
    (H-1) x (W-1) domain."""
    _, _, h, w = x.data.shape
    gx = T.sub(T.narrow(x, 3, 1, w - 1), T.narrow(x, 3, 0, w - 1))
    gy = T.sub(T.narrow(x, 2, 1, h - 1), T.narrow(x, 2, 0, h - 1))
    gx = T.narrow(gx, 2, 0, h - 1)
    gy = T.narrow(gy, 3, 0, w - 1)
    return gx, gy


def _patch_stats(g: Tensor, r0, r1, c0, c1):
    """Per-channel mean and population std over one patch: two [N, C]."""
    patch = T.narrow(T.narrow(g, 2, r0, r1 - r0), 3, c0, c1 - c0)
    mu = T.tmean(patch, axes=(2, 3), keepdims=True)
    centered = T.sub(patch, mu)
    var = T.tmean(T.mul(centered, centered), axes=(2, 3), keepdims=True)
    n, c = patch.data.shape[:2]
    return T.reshape(mu, (n, c)), T.reshape(T.sqrt(var), (n, c))


GRID = 8  # the spatial grid is GRID x GRID patches


def gradient_match(img: Tensor, target: Tensor) -> Tensor:
    """Mean over an 8x8 patch grid of squared differences between the
    per-patch per-channel moments of the two images' forward-difference
    gradients.  Gradient tensors lose one element per axis; the last grid
    row/column of patches is truncated accordingly."""
    if img.data.shape != target.data.shape:
        raise ShapeError(f"gradient_match: shapes {img.data.shape} != {target.data.shape}")
    if img.data.ndim != 4:
        raise ShapeError(f"gradient_match: expected [N,C,H,W], got {img.data.shape}")
    n, _, h, w = img.data.shape
    if h % GRID or w % GRID:
        raise ContractError(f"gradient_match: {h}x{w} not divisible by {GRID}")
    if h // GRID < 2 or w // GRID < 2:
        raise ContractError(
            f"gradient_match: {h}x{w} too small for a {GRID}x{GRID} grid of "
            "non-empty gradient patches")
    diffs_i = _forward_diffs(img)
    diffs_t = _forward_diffs(target)
    ph, pw = h // GRID, w // GRID
    total = Tensor(0.0)
    for i in range(GRID):
        r0, r1 = i * ph, min((i + 1) * ph, h - 1)
        for j in range(GRID):
            c0, c1 = j * pw, min((j + 1) * pw, w - 1)
            for gi, gt in zip(diffs_i, diffs_t):
                mu_i, sd_i = _patch_stats(gi, r0, r1, c0, c1)
                mu_t, sd_t = _patch_stats(gt, r0, r1, c0, c1)
                dm = T.sub(mu_i, mu_t)
                ds = T.sub(sd_i, sd_t)
                total = total + T.tsum(T.mul(dm, dm)) + T.tsum(T.mul(ds, ds))
    return T.div(total, Tensor(float(GRID * GRID * n)))
