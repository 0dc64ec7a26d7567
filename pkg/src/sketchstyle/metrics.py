"""Evaluation metrics: Frechet distance between feature Gaussians, style
classification score, Gram-matrix L2, and the binary edge-map
disagreement measures.

Covariance and eigendecomposition work runs in float64; everything else
stays in float32.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericError, ShapeError
from .tensor import Tensor

_EIG_CLAMP = -1e-6  # eigenvalues above this are treated as roundoff and clamped to 0


def _as_array(x):
    return x.data if isinstance(x, Tensor) else np.asarray(x)


@dataclass
class GaussianStats:
    mean: np.ndarray  # [S]
    cov: np.ndarray   # [S, S], symmetric

    @classmethod
    def from_features(cls, features) -> "GaussianStats":
        f = _as_array(features).astype(np.float64)
        if f.ndim != 2:
            raise ShapeError(f"GaussianStats: expected [n, S] features, got {f.shape}")
        mean = f.mean(axis=0)
        centered = f - mean
        cov = centered.T @ centered / f.shape[0]
        return cls(mean=mean, cov=(cov + cov.T) / 2.0)


def _psd_sqrt(mat: np.ndarray) -> np.ndarray:
    try:
        vals, vecs = np.linalg.eigh(mat)
    except np.linalg.LinAlgError as e:
        raise NumericError(f"eigendecomposition failed: {e}; condition estimate "
                           f"{np.linalg.cond(mat):.3e}")
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def frechet_distance(a: GaussianStats, b: GaussianStats) -> float:
    """||mu_a - mu_b||^2 + Tr(Ca + Cb - 2 (Ca Cb)^(1/2)), via the
    symmetric square-root sandwich Ca^(1/2) Cb Ca^(1/2)."""
    if a.mean.shape != b.mean.shape or a.cov.shape != b.cov.shape:
        raise ShapeError("frechet_distance: mismatched statistic shapes")
    ca = (a.cov + a.cov.T) / 2.0
    cb = (b.cov + b.cov.T) / 2.0
    ra = _psd_sqrt(ca)
    inner = ra @ cb @ ra
    inner = (inner + inner.T) / 2.0
    try:
        vals = np.linalg.eigvalsh(inner)
    except np.linalg.LinAlgError as e:
        raise NumericError(f"eigendecomposition failed: {e}; condition estimate "
                           f"{np.linalg.cond(inner):.3e}")
    tr_sqrt = np.sqrt(np.clip(vals, 0.0, None)).sum()
    diff = a.mean - b.mean
    val = float(diff @ diff + np.trace(ca) + np.trace(cb) - 2.0 * tr_sqrt)
    if not np.isfinite(val):
        raise NumericError("frechet_distance produced a non-finite value")
    return max(val, 0.0)


def gram_matrix(f) -> np.ndarray:
    """Channel Gram matrix of a [1, C, H, W] feature map, scaled by 1/(C*H*W)."""
    arr = _as_array(f).astype(np.float64)
    if arr.ndim != 4 or arr.shape[0] != 1:
        raise ShapeError(f"gram_matrix: expected [1, C, H, W], got {arr.shape}")
    _, c, h, w = arr.shape
    flat = arr.reshape(c, h * w)
    return flat @ flat.T / (c * h * w)


def gram_l2(f_a, f_b) -> float:
    """Frobenius distance between channel Gram matrices, x1000."""
    a, b = _as_array(f_a), _as_array(f_b)
    if a.shape != b.shape:
        raise ShapeError(f"gram_l2: shapes {a.shape} != {b.shape}")
    return float(np.linalg.norm(gram_matrix(f_a) - gram_matrix(f_b))) * 1000.0


def pdar(edge_a, edge_b) -> float:
    """Pixel disagreement ratio: fraction of differing pixels."""
    a, b = _as_array(edge_a), _as_array(edge_b)
    if a.shape != b.shape:
        raise ShapeError(f"pdar: shapes {a.shape} != {b.shape}")
    return float(np.mean(a != b))


def edge_l1(edge_a, edge_b) -> float:
    """Mean absolute difference between edge maps, x1000."""
    a, b = _as_array(edge_a), _as_array(edge_b)
    if a.shape != b.shape:
        raise ShapeError(f"edge_l1: shapes {a.shape} != {b.shape}")
    return float(np.mean(np.abs(a.astype(np.float64) - b.astype(np.float64)))) * 1000.0


def style_classification_score(generated_images, style_labels, classifier) -> float:
    """Fraction of generated images the classifier assigns to their
    reference style.  ``classifier`` maps a [N, 3, H, W] batch to integer
    label predictions."""
    preds = np.asarray(classifier(generated_images))
    labels = np.asarray(style_labels)
    if preds.shape != labels.shape:
        raise ShapeError(f"classification: {preds.shape} predictions vs {labels.shape} labels")
    if labels.size == 0:
        raise ShapeError("classification: empty label set")
    return float(np.mean(preds == labels))
