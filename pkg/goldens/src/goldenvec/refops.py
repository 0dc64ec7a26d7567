"""Reference kernels, written directly from the layer equations on top of
torch autograd.  These never import the implementation under test; they
exist to produce independent expected values.

Conventions shared through the manifest:
  - per-channel statistics are population (biased) moments over spatial
    positions;
  - adaptive average pooling partitions an axis of length H into
    non-overlapping blocks [i*H/out, (i+1)*H/out) with floor arithmetic;
  - the feature-map transform pools each sketch-selected part with
    mask-aware windows (empty windows fall back to the unmasked window
    statistic) and accumulates in float64.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg
import torch
import torch.nn.functional as F

EPS = 1e-5
LEAKY_SLOPE = 0.2


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------

def channel_stats(x: torch.Tensor):
    """Per-(sample, channel) spatial mean and population std, [N,C,1,1]."""
    mu = x.mean(dim=(2, 3), keepdim=True)
    var = ((x - mu) ** 2).mean(dim=(2, 3), keepdim=True)
    return mu, var.sqrt()


def adaptive_avg_floor(x: torch.Tensor, out_size: int) -> torch.Tensor:
    """Adaptive average pooling over non-overlapping floor-boundary blocks."""
    n, c, h, w = x.shape
    rows = [x[:, :, h * i // out_size: h * (i + 1) // out_size,
              :] for i in range(out_size)]
    cells = [[blk[:, :, :, w * j // out_size: w * (j + 1) // out_size]
              .mean(dim=(2, 3)) for j in range(out_size)] for blk in rows]
    return torch.stack([torch.stack(r, dim=-1) for r in cells], dim=-2)


def pooling_chain(x: torch.Tensor) -> torch.Tensor:
    """Repeated 5x5/stride-3 max pooling while the side exceeds 10, then
    adaptive average pooling to 4x4."""
    while x.shape[2] > 10:
        x = F.max_pool2d(x, 5, 3)
    return adaptive_avg_floor(x, 4)


# ---------------------------------------------------------------------------
# conditioning layers
# ---------------------------------------------------------------------------

def adain(f, mu_style, sigma_style, eps=EPS):
    mu, sigma = channel_stats(f)
    return sigma_style * (f - mu) / (sigma + eps) + mu_style


def dmi(f, mask, w_c, b_c, w_p, b_p):
    return (w_c * (mask * f) + b_c) + (w_p * ((1.0 - mask) * f) + b_p)


def idn(f, conv1_w, conv1_b, conv2_w, conv2_b, eps=EPS):
    """Predict per-channel style means with a strided-then-global conv
    stack, then divide the predicted moments out."""
    h = F.leaky_relu(F.conv2d(f, conv1_w, conv1_b, stride=2, padding=1),
                     LEAKY_SLOPE)
    mu_pred = F.conv2d(h, conv2_w, conv2_b)
    centered = f - mu_pred
    _, sigma_pred = channel_stats(centered)
    content = centered / (sigma_pred + eps)
    return mu_pred, sigma_pred, content


def attn_res_block(f, v, conv1_w, conv1_b, conv2_w, conv2_b, gate_w, gate_b):
    """Residual block with a sigmoid channel gate from the style vector."""
    h = F.conv2d(f, conv1_w, conv1_b, padding=1)
    mu, sigma = channel_stats(h)
    h = F.leaky_relu((h - mu) / (sigma + EPS), LEAKY_SLOPE)
    h = F.conv2d(h, conv2_w, conv2_b, padding=1)
    gate = torch.sigmoid(v @ gate_w.T + gate_b)
    return f + gate[:, :, None, None] * h


# ---------------------------------------------------------------------------
# feature-map transform: the five steps, spelled out
# ---------------------------------------------------------------------------

def _masked_window_max(values, selected):
    """Max over selected entries of one window; plain max if none selected."""
    return values[selected].max() if selected.any() else values.max()


def _masked_window_mean(values, selected):
    return values[selected].mean() if selected.any() else values.mean()


def _masked_pool_to_grid(part: torch.Tensor, sel: torch.Tensor, out_size: int):
    """Mask-aware version of the pooling chain, element-by-element."""
    n, c, size, _ = part.shape
    while size > 10:
        new = (size - 5) // 3 + 1
        nxt = torch.empty((n, c, new, new), dtype=part.dtype)
        nsel = torch.empty((n, c, new, new), dtype=torch.bool)
        for bi in range(n):
            for ci in range(c):
                for i in range(new):
                    for j in range(new):
                        vw = part[bi, ci, 3 * i:3 * i + 5, 3 * j:3 * j + 5]
                        sw = sel[bi, ci, 3 * i:3 * i + 5, 3 * j:3 * j + 5]
                        nxt[bi, ci, i, j] = _masked_window_max(vw, sw)
                        nsel[bi, ci, i, j] = sw.any()
        part, sel, size = nxt, nsel, new
    out = torch.empty((n, c, out_size, out_size), dtype=part.dtype)
    for bi in range(n):
        for ci in range(c):
            for i in range(out_size):
                for j in range(out_size):
                    h0, h1 = size * i // out_size, size * (i + 1) // out_size
                    w0, w1 = size * j // out_size, size * (j + 1) // out_size
                    vw = part[bi, ci, h0:h1, w0:w1]
                    sw = sel[bi, ci, h0:h1, w0:w1]
                    out[bi, ci, i, j] = _masked_window_mean(vw, sw)
    return out


def fmt(f_style: torch.Tensor, style_sketch: torch.Tensor,
        input_sketch: torch.Tensor, grid: int = 4) -> torch.Tensor:
    """Five steps: split by the style sketch, pool each part to a 4x4
    summary, tile back to full resolution, re-mask by the input sketch,
    and sum the two branches."""
    f = f_style.double()
    h = f.shape[2]
    contour_sel = (style_sketch > 0).expand_as(f)
    plain_sel = ~contour_sel
    # step 1: split — represented by the selection masks above
    # step 2: pool each part to the grid summary
    contour = _masked_pool_to_grid(f, contour_sel, grid)
    plain = _masked_pool_to_grid(f, plain_sel, grid)
    # step 3: tile the summaries back up to full resolution
    factor = h // grid
    tiled_c = contour.repeat_interleave(factor, 2).repeat_interleave(factor, 3)
    tiled_p = plain.repeat_interleave(factor, 2).repeat_interleave(factor, 3)
    # steps 4-5: re-mask by the input sketch and sum
    mi = input_sketch.double()
    return (mi * tiled_c + (1.0 - mi) * tiled_p).float()


# ---------------------------------------------------------------------------
# losses and metrics
# ---------------------------------------------------------------------------

GRID = 8


def gradient_match(img: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean over an 8x8 patch grid of squared differences between per-patch
    per-channel moments of forward-difference gradients."""
    n, _, h, w = img.shape

    def diffs(x):
        gx = (x[:, :, :, 1:] - x[:, :, :, :-1])[:, :, : h - 1, :]
        gy = (x[:, :, 1:, :] - x[:, :, :-1, :])[:, :, :, : w - 1]
        return gx, gy

    ph, pw = h // GRID, w // GRID
    total = img.new_zeros(())
    for gi, gt in zip(diffs(img), diffs(target)):
        for i in range(GRID):
            r0, r1 = i * ph, min((i + 1) * ph, h - 1)
            for j in range(GRID):
                c0, c1 = j * pw, min((j + 1) * pw, w - 1)
                pi = gi[:, :, r0:r1, c0:c1]
                pt = gt[:, :, r0:r1, c0:c1]
                mu_i = pi.mean(dim=(2, 3))
                mu_t = pt.mean(dim=(2, 3))
                sd_i = ((pi - mu_i[:, :, None, None]) ** 2).mean(dim=(2, 3)).sqrt()
                sd_t = ((pt - mu_t[:, :, None, None]) ** 2).mean(dim=(2, 3)).sqrt()
                total = total + ((mu_i - mu_t) ** 2).sum() + ((sd_i - sd_t) ** 2).sum()
    return total / (GRID * GRID * n)


def gram_l2(a: np.ndarray, b: np.ndarray) -> float:
    """Frobenius distance between channel Gram matrices, x1000."""

    def gram(f):
        _, c, h, w = f.shape
        flat = f.astype(np.float64).reshape(c, h * w)
        return flat @ flat.T / (c * h * w)

    return float(np.linalg.norm(gram(a) - gram(b))) * 1000.0


def frechet_distance(mean_a, cov_a, mean_b, cov_b) -> float:
    """||mu_a - mu_b||^2 + Tr(Ca + Cb - 2 (Ca Cb)^(1/2))."""
    ca = np.asarray(cov_a, dtype=np.float64)
    cb = np.asarray(cov_b, dtype=np.float64)
    diff = np.asarray(mean_a, dtype=np.float64) - np.asarray(mean_b, dtype=np.float64)
    root = scipy.linalg.sqrtm(ca @ cb)
    if np.iscomplexobj(root):
        root = root.real
    val = float(diff @ diff + np.trace(ca) + np.trace(cb) - 2.0 * np.trace(root))
    return max(val, 0.0)
