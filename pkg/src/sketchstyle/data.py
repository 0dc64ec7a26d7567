"""Synthetic procedural-art corpus, sketch extraction, and image I/O.

Images are [3, H, W] float32 in [-1, 1].  Each corpus image composes a
horizon line plus 1-4 filled primitives (disk, triangle, rectangle)
rendered with its style's palette and texture.  Shape fills are chosen to
contrast in luminance with the pixels they cover so the edge extractor
always finds the contours.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter

from .config import CorpusSpec, StyleRecipe
from .errors import ConfigError, IoError
from .tensor import Tensor

_LUMA = np.array([0.299, 0.587, 0.114])

# difference-of-Gaussians extractor settings
DOG_SIGMA = 1.0
DOG_K = 1.6
DOG_TAU = 0.1


# ---------------------------------------------------------------------------
# PNG I/O
# ---------------------------------------------------------------------------

def save_png(tensor, path):
    """[3,H,W] or [1,H,W]/[H,W] in [-1,1] -> 8-bit PNG, rounding half away
    from zero."""
    arr = tensor.data if isinstance(tensor, Tensor) else np.asarray(tensor)
    if arr.ndim == 2:
        arr = arr[None]
    levels = np.clip((arr.astype(np.float64) + 1.0) / 2.0 * 255.0, 0.0, 255.0)
    quant = np.floor(levels + 0.5).astype(np.uint8)  # all values nonnegative here
    if quant.shape[0] == 1:
        img = Image.fromarray(quant[0], mode="L")
    elif quant.shape[0] == 3:
        img = Image.fromarray(quant.transpose(1, 2, 0), mode="RGB")
    else:
        raise IoError(f"save_png: expected 1 or 3 channels, got {quant.shape[0]}")
    img.save(path)


def load_png(path) -> Tensor:
    """8-bit RGB or grayscale PNG -> [C,H,W] float32 in [-1,1]."""
    try:
        img = Image.open(path)
        img.load()
    except (OSError, SyntaxError) as e:
        raise IoError(f"cannot read image {path}: {e}")
    if img.mode not in ("L", "RGB"):
        img = img.convert("RGB")
    arr = np.asarray(img, dtype=np.float32)
    if arr.ndim == 2:
        arr = arr[None]
    else:
        arr = arr.transpose(2, 0, 1)
    # affine map computed in float64 so grid values round-trip bit-exactly
    return Tensor((arr.astype(np.float64) / 255.0 * 2.0 - 1.0).astype(np.float32))


# ---------------------------------------------------------------------------
# sketch extraction
# ---------------------------------------------------------------------------

def extract_sketch(image, sigma: float = DOG_SIGMA, k: float = DOG_K,
                   tau: float = DOG_TAU) -> Tensor:
    """Difference-of-Gaussians edge detector: grayscale, DoG(sigma, k*sigma),
    binarize on |response| > tau.  Returns a [1,H,W] binary mask."""
    arr = image.data if isinstance(image, Tensor) else np.asarray(image)
    if arr.ndim == 4:
        if arr.shape[0] != 1:
            raise ConfigError("extract_sketch expects a single image")
        arr = arr[0]
    gray = np.tensordot(_LUMA, arr.astype(np.float64), axes=(0, 0)) if arr.shape[0] == 3 else arr[0]
    dog = gaussian_filter(gray, sigma, mode="nearest") - gaussian_filter(gray, k * sigma, mode="nearest")
    return Tensor((np.abs(dog) > tau).astype(np.float32)[None])


# ---------------------------------------------------------------------------
# procedural rendering
# ---------------------------------------------------------------------------

def _palette_lumas(recipe: StyleRecipe):
    return [float(_LUMA @ np.asarray(c)) for c in recipe.palette]


def _contrasting_color(recipe: StyleRecipe, under_luma: float, rng):
    """Palette entry with the largest luminance contrast to the covered
    area; ties broken by rng for variety."""
    lumas = _palette_lumas(recipe)
    gaps = np.array([abs(l - under_luma) for l in lumas])
    best = np.flatnonzero(gaps >= gaps.max() - 0.05)
    return np.asarray(recipe.palette[int(rng.choice(best))], dtype=np.float64)


def _apply_texture(img, recipe: StyleRecipe, rng):
    h, w = img.shape[1:]
    if recipe.texture == "noise":
        img += rng.normal(0.0, recipe.texture_param, size=(1, h, w))
    elif recipe.texture == "vgrad":
        ramp = np.linspace(-0.5, 0.5, h)[None, :, None] * recipe.texture_param
        img += ramp
    elif recipe.texture == "stripes":
        xs = np.arange(w)[None, None, :]
        img += 0.08 * np.sin(2.0 * np.pi * recipe.texture_param * xs / w)
    return img


def render_image(recipe: StyleRecipe, resolution: int, rng) -> np.ndarray:
    """One [3,R,R] float32 image in [-1,1]."""
    r = resolution
    yy, xx = np.mgrid[0:r, 0:r].astype(np.float64)
    img = np.empty((3, r, r), dtype=np.float64)
    base = np.asarray(recipe.palette[0], dtype=np.float64)
    img[:] = base[:, None, None]
    # horizon line splits the canvas into two contrasting regions
    y0 = int(rng.uniform(0.3, 0.7) * r)
    ground = _contrasting_color(recipe, float(_LUMA @ base), rng)
    img[:, y0:, :] = ground[:, None, None]
    region_luma = np.where(yy >= y0, float(_LUMA @ ground), float(_LUMA @ base))

    for _ in range(int(rng.integers(1, 5))):
        kind = rng.choice(["disk", "triangle", "rect"])
        cx, cy = rng.uniform(0.15 * r, 0.85 * r, size=2)
        size = rng.uniform(0.1 * r, 0.28 * r)
        if kind == "disk":
            inside = (xx - cx) ** 2 + (yy - cy) ** 2 <= size ** 2
        elif kind == "rect":
            wx, wy = size, rng.uniform(0.1 * r, 0.28 * r)
            inside = (np.abs(xx - cx) <= wx) & (np.abs(yy - cy) <= wy)
        else:
            ang = rng.uniform(0, 2 * np.pi, size=3) + rng.uniform(0, 2 * np.pi)
            vx = cx + size * np.cos(ang)
            vy = cy + size * np.sin(ang)
            inside = np.ones((r, r), dtype=bool)
            for i in range(3):
                x1, y1 = vx[i], vy[i]
                x2, y2 = vx[(i + 1) % 3], vy[(i + 1) % 3]
                cross = (x2 - x1) * (yy - y1) - (y2 - y1) * (xx - x1)
                x3, y3 = vx[(i + 2) % 3], vy[(i + 2) % 3]
                ref = (x2 - x1) * (y3 - y1) - (y2 - y1) * (x3 - x1)
                inside &= (cross * ref) >= 0
        if not inside.any():
            continue
        under = float(region_luma[inside].mean())
        color = _contrasting_color(recipe, under, rng)
        img[:, inside] = color[:, None]
        region_luma[inside] = float(_LUMA @ color)

    img = _apply_texture(img, recipe, rng)
    if recipe.contour_style == "soft":
        img = np.stack([gaussian_filter(ch, 0.6, mode="nearest") for ch in img])
    return (np.clip(img, 0.0, 1.0) * 2.0 - 1.0).astype(np.float32)


# ---------------------------------------------------------------------------
# corpus
# ---------------------------------------------------------------------------

@dataclass
class Dataset:
    images: np.ndarray    # [n, 3, R, R] float32 in [-1, 1]
    sketches: np.ndarray  # [n, 1, R, R] float32 in {0, 1}
    labels: np.ndarray    # [n] int
    train_mask: np.ndarray  # [n] bool
    spec: CorpusSpec

    @property
    def n_styles(self) -> int:
        return len(self.spec.styles)

    def indices(self, split: str):
        mask = self.train_mask if split == "train" else ~self.train_mask
        return np.flatnonzero(mask)

    def save(self, out_dir):
        os.makedirs(os.path.join(out_dir, "images"), exist_ok=True)
        os.makedirs(os.path.join(out_dir, "sketches"), exist_ok=True)
        for i in range(len(self.labels)):
            save_png(self.images[i], os.path.join(out_dir, "images", f"{i:04d}.png"))
            save_png(self.sketches[i] * 2.0 - 1.0, os.path.join(out_dir, "sketches", f"{i:04d}.png"))
        with open(os.path.join(out_dir, "labels.tsv"), "w") as f:
            for i, (lab, tr) in enumerate(zip(self.labels, self.train_mask)):
                f.write(f"{i}\t{int(lab)}\t{'train' if tr else 'test'}\n")
        with open(os.path.join(out_dir, "spec.json"), "w") as f:
            import json
            json.dump(self.spec.to_dict(), f, indent=2)

    @classmethod
    def load(cls, in_dir) -> "Dataset":
        import json
        try:
            with open(os.path.join(in_dir, "spec.json")) as f:
                spec = CorpusSpec.from_dict(json.load(f))
            rows = []
            with open(os.path.join(in_dir, "labels.tsv")) as f:
                for line in f:
                    idx, lab, split = line.split()
                    rows.append((int(idx), int(lab), split))
        except OSError as e:
            raise IoError(f"cannot read dataset at {in_dir}: {e}")
        n = len(rows)
        images = np.empty((n, 3, spec.resolution, spec.resolution), dtype=np.float32)
        sketches = np.empty((n, 1, spec.resolution, spec.resolution), dtype=np.float32)
        labels = np.empty(n, dtype=np.int64)
        train_mask = np.empty(n, dtype=bool)
        for idx, lab, split in rows:
            images[idx] = load_png(os.path.join(in_dir, "images", f"{idx:04d}.png")).data
            sk = load_png(os.path.join(in_dir, "sketches", f"{idx:04d}.png")).data
            sketches[idx] = (sk > 0).astype(np.float32)
            labels[idx] = lab
            train_mask[idx] = split == "train"
        return cls(images, sketches, labels, train_mask, spec)


def _check_separability(images, labels, n_styles):
    means = np.stack([images[labels == s].mean(axis=(0, 2, 3)) for s in range(n_styles)])
    per_img = images.mean(axis=(2, 3))
    spreads = [np.linalg.norm(per_img[labels == s] - means[s], axis=1).mean()
               for s in range(n_styles)]
    spread = float(np.mean(spreads))
    between = min(np.linalg.norm(means[i] - means[j])
                  for i in range(n_styles) for j in range(i + 1, n_styles))
    if between <= spread:
        raise ConfigError(
            f"style recipes not separable: min between-style distance {between:.3f} "
            f"<= within-style spread {spread:.3f}")


def generate_corpus(spec: CorpusSpec) -> Dataset:
    """Deterministic corpus from (spec, seed); per-image RNG derived by
    counter so generation order never matters."""
    n, r = spec.n_images, spec.resolution
    n_styles = len(spec.styles)
    images = np.empty((n, 3, r, r), dtype=np.float32)
    sketches = np.empty((n, 1, r, r), dtype=np.float32)
    labels = np.empty(n, dtype=np.int64)
    for i in range(n):
        style = i % n_styles
        rng = np.random.default_rng([spec.seed, i])
        images[i] = render_image(spec.styles[style], r, rng)
        sketches[i] = extract_sketch(images[i]).data
        labels[i] = style
    _check_separability(images, labels, n_styles)
    order = np.random.default_rng([spec.seed, 1 << 30]).permutation(n)
    n_train = int(np.floor(spec.train_fraction * n))
    train_mask = np.zeros(n, dtype=bool)
    train_mask[order[:n_train]] = True
    return Dataset(images, sketches, labels, train_mask, spec)
