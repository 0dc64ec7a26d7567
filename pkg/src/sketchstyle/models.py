"""The three networks: frozen feature extractor E, U-Net generator G with
mask injection / feature-map transfer / style-gated residual blocks, and
the discriminator D with the de-normalizing style/content heads.

Channel widths follow base_width at full resolution, doubling per
downsample, so E's tap widths line up with G's decoder widths at every
resolution (the AdaIN fallback relies on this).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .config import ModelConfig, TrainConfig
from .data import Dataset, extract_sketch
from .errors import ConfigError, ContractError, ShapeError, TrainingFailure
from .layers import (AttnResBlock, DmiParams, IdnPredictor, adain, check_mask,
                     dmi_forward, downsample_mask, fmt, idn_forward)
from .losses import DiscriminatorOutput
from .nn import Conv2d, Linear, Module
from .optim import Adam
from .tensor import Tensor


@dataclass
class StyleBundle:
    style_vec: Tensor          # [N, S]
    feature_maps: dict         # spatial size -> Tensor [N, C, s, s]
    style_sketch: Tensor       # [N, 1, H, W] binary, extracted from the style image

    def expand(self, n: int) -> "StyleBundle":
        """Broadcast a single-image bundle across a batch of n sketches."""
        if self.style_vec.data.shape[0] == n:
            return self
        if self.style_vec.data.shape[0] != 1:
            raise ShapeError(
                f"bundle batch {self.style_vec.data.shape[0]} incompatible with {n}")
        rep = lambda t: Tensor(np.repeat(t.data, n, axis=0))
        return StyleBundle(rep(self.style_vec),
                           {k: rep(v) for k, v in self.feature_maps.items()},
                           rep(self.style_sketch))


def blend_styles(bundles, weights=None) -> StyleBundle:
    """Weighted average of style vectors and feature maps; the blended
    style sketch is the 0.5-thresholded weighted average of the sketches."""
    if not bundles:
        raise ContractError("blend_styles: empty bundle list")
    if weights is None:
        weights = [1.0] * len(bundles)
    w = np.asarray(weights, dtype=np.float64)
    if len(w) != len(bundles) or (w < 0).any() or w.sum() <= 0:
        raise ContractError(f"blend_styles: bad weights {weights}")
    w = w / w.sum()

    def avg(arrs):
        return Tensor(sum(wi * a.data.astype(np.float64) for wi, a in zip(w, arrs))
                      .astype(np.float32))

    vec = avg([b.style_vec for b in bundles])
    maps = {k: avg([b.feature_maps[k] for b in bundles]) for k in bundles[0].feature_maps}
    sk = sum(wi * b.style_sketch.data.astype(np.float64) for wi, b in zip(w, bundles))
    return StyleBundle(vec, maps, Tensor((sk >= 0.5).astype(np.float32)))


class StyleEncoder(Module):
    """4-stage conv classifier; the penultimate (pooled) activation is the
    style vector and intermediate stages provide multi-level taps."""

    def __init__(self, rng, cfg: ModelConfig):
        w = cfg.base_width
        self.cfg = cfg
        self.stage1 = Conv2d(rng, 3, w, 3, stride=1, padding=1)
        self.stage2 = Conv2d(rng, w, 2 * w, 3, stride=2, padding=1)
        self.stage3 = Conv2d(rng, 2 * w, 4 * w, 3, stride=2, padding=1)
        self.stage4 = Conv2d(rng, 4 * w, cfg.style_dim, 3, stride=2, padding=1)
        self.head = Linear(rng, cfg.style_dim, cfg.n_styles)
        self.trained = False

    def features(self, x: Tensor):
        r = self.cfg.resolution
        f1 = T.leaky_relu(self.stage1(x), 0.2)
        f2 = T.leaky_relu(self.stage2(f1), 0.2)
        f3 = T.leaky_relu(self.stage3(f2), 0.2)
        f4 = T.leaky_relu(self.stage4(f3), 0.2)
        vec = T.reshape(T.tmean(f4, axes=(2, 3), keepdims=True),
                        (f4.data.shape[0], f4.data.shape[1]))
        taps = {r: f1, r // 2: f2, r // 4: f3}
        return vec, taps

    def logits(self, x: Tensor) -> Tensor:
        vec, _ = self.features(x)
        return self.head(vec)

    def classify(self, images) -> np.ndarray:
        arr = images.data if isinstance(images, Tensor) else np.asarray(images, dtype=np.float32)
        with T.no_grad():
            return self.logits(Tensor(arr)).data.argmax(axis=1)


def extract_style(e: StyleEncoder, style_image: Tensor) -> StyleBundle:
    """Deterministic, graph-free feature extraction from the frozen E."""
    if not e.trained:
        raise ContractError("extract_style: encoder has not been trained")
    with T.no_grad():
        vec, taps = e.features(style_image)
    sketches = np.stack([extract_sketch(img).data for img in style_image.data])
    return StyleBundle(vec.detach(), {k: v.detach() for k, v in taps.items()},
                       Tensor(sketches))


def train_encoder(dataset: Dataset, config: TrainConfig) -> StyleEncoder:
    """Fit E as a style classifier on the train split, then freeze it.

    Raises TrainingFailure if validation accuracy stays under 0.6 after
    the epoch budget; the contract target is 0.9.
    """
    if dataset.n_styles < 2:
        raise ConfigError("train_encoder: need at least 2 styles")
    mcfg = config.model
    if mcfg.n_styles != dataset.n_styles:
        raise ConfigError(
            f"model expects {mcfg.n_styles} styles, corpus has {dataset.n_styles}")
    rng = np.random.default_rng([config.seed, 0xE])
    e = StyleEncoder(rng, mcfg)
    opt = Adam(e.parameters(), lr=1e-3, beta1=0.9, beta2=0.999)
    train_idx = dataset.indices("train")
    test_idx = dataset.indices("test")
    batch = 32
    for _ in range(config.encoder_epochs):
        order = rng.permutation(train_idx)
        for i in range(0, len(order), batch):
            sel = order[i:i + batch]
            loss = T.softmax_cross_entropy(e.logits(Tensor(dataset.images[sel])),
                                           dataset.labels[sel])
            e.zero_grad()
            T.backward(loss)
            opt.step()
    preds = e.classify(dataset.images[test_idx])
    acc = float(np.mean(preds == dataset.labels[test_idx]))
    if acc < 0.6:
        raise TrainingFailure(
            f"encoder validation accuracy {acc:.3f} < 0.6; corpus or config defect")
    e.trained = True
    e.val_accuracy = acc
    e.freeze()
    return e


class Generator(Module):
    """U-Net over the sketch, conditioned on a style bundle."""

    def __init__(self, rng, cfg: ModelConfig, use_dmi: bool = True, use_fmt: bool = True):
        w = cfg.base_width
        r = cfg.resolution
        self.cfg = cfg
        self.use_dmi = use_dmi
        self.use_fmt = use_fmt
        self.enc1 = Conv2d(rng, 1, w, 3, stride=1, padding=1)
        self.enc2 = Conv2d(rng, w, 2 * w, 3, stride=2, padding=1)
        self.enc3 = Conv2d(rng, 2 * w, 4 * w, 3, stride=2, padding=1)
        self.blocks = [AttnResBlock(rng, 4 * w, cfg.style_dim) for _ in range(cfg.n_res_blocks)]
        self._dec_widths = {r // 4: 4 * w, r // 2: 2 * w, r: w}
        # decoder stage inputs: previous decoder features + skip + optional FMT map
        def dec_in(res, prev):
            extra = self._dec_widths[res] if (use_fmt and res in cfg.fmt.resolutions) else 0
            return prev + self._dec_widths[res] + extra
        self.dec3 = Conv2d(rng, dec_in(r // 4, 4 * w), 4 * w, 3, padding=1)
        self.dec2 = Conv2d(rng, dec_in(r // 2, 4 * w), 2 * w, 3, padding=1)
        self.dec1 = Conv2d(rng, dec_in(r, 2 * w), w, 3, padding=1)
        self.out = Conv2d(rng, w, 3, 3, padding=1)
        if use_dmi:
            self.dmi = {res: DmiParams(self._dec_widths[res])
                        for res in cfg.dmi_resolutions if res in self._dec_widths}
        else:
            self.dmi = {}
        self.record_dmi = False
        self.last_dmi = []

    def named_parameters(self, prefix: str = ""):
        out = super().named_parameters(prefix)
        for res, p in sorted(self.dmi.items()):
            out.extend(p.named_parameters(f"{prefix}dmi.{res}."))
        return out

    def _stage(self, x, skip, conv, res, sketch, bundle):
        cfg = self.cfg
        parts = [x, skip]
        if res in cfg.fmt.resolutions:
            style_map = bundle.feature_maps[res]
            if self.use_fmt:
                style_sk = downsample_mask(bundle.style_sketch, (res, res))
                input_sk = downsample_mask(sketch, (res, res))
                parts.append(fmt(style_map, style_sk, input_sk, cfg.fmt))
            else:
                # moment-transfer fallback: re-normalize the skip features
                # (whose width matches the tap) to the style map's moments
                with T.no_grad():
                    mu_s, sig_s = T.instance_stats(style_map)
                parts[1] = adain(skip, mu_s.detach(), sig_s.detach(), cfg.eps)
        h = T.leaky_relu(conv(T.concat(parts, axis=1)), 0.2)
        if res in self.dmi:
            mask = downsample_mask(sketch, (res, res))
            if self.record_dmi:
                self.last_dmi.append((res, mask.data.copy(), h.data.copy()))
            h = dmi_forward(h, mask, self.dmi[res])
        return h

    def __call__(self, sketch: Tensor, bundle: StyleBundle) -> Tensor:
        check_mask(sketch, "input sketch")
        r = self.cfg.resolution
        if sketch.data.shape[2:] != (r, r):
            raise ShapeError(f"generator: sketch {sketch.data.shape[2:]} != {(r, r)}")
        n = sketch.data.shape[0]
        bundle = bundle.expand(n)
        if self.record_dmi:
            self.last_dmi = []
        e1 = T.leaky_relu(self.enc1(sketch), 0.2)
        e2 = T.leaky_relu(self.enc2(e1), 0.2)
        e3 = T.leaky_relu(self.enc3(e2), 0.2)
        h = e3
        for block in self.blocks:
            h = block(h, bundle.style_vec)
        h = self._stage(h, e3, self.dec3, r // 4, sketch, bundle)
        h = self._stage(T.upsample_nearest(h, 2), e2, self.dec2, r // 2, sketch, bundle)
        h = self._stage(T.upsample_nearest(h, 2), e1, self.dec1, r, sketch, bundle)
        return T.tanh(self.out(h))


def generate(g: Generator, sketch: Tensor, style: StyleBundle) -> Tensor:
    return g(sketch, style)


class Discriminator(Module):
    """Conv trunk with a realness head on trunk features and, behind the
    de-normalization stage, a style head (MLP on the predicted moments)
    and a content head (convs on the de-normalized map)."""

    def __init__(self, rng, cfg: ModelConfig, use_idn: bool = True):
        w = cfg.base_width
        self.cfg = cfg
        self.use_idn = use_idn
        self.t1 = Conv2d(rng, 3, w, 3, stride=2, padding=1)
        self.t2 = Conv2d(rng, w, 2 * w, 3, stride=2, padding=1)
        self.t3 = Conv2d(rng, 2 * w, 4 * w, 3, stride=2, padding=1)
        trunk_res = cfg.resolution // 8
        self.real_conv = Conv2d(rng, 4 * w, 4 * w, 3, padding=1)
        self.real_head = Linear(rng, 4 * w, 1)
        if use_idn:
            self.idn = IdnPredictor(rng, 4 * w, trunk_res)
            self.style_fc1 = Linear(rng, 8 * w, 8 * w)
        else:
            # naive two-branch baseline: style branch reads the trunk directly
            self.style_conv = Conv2d(rng, 4 * w, 4 * w, 3, padding=1)
            self.style_fc1 = Linear(rng, 4 * w, 8 * w)
        self.style_fc2 = Linear(rng, 8 * w, cfg.style_dim)
        self.c1 = Conv2d(rng, 4 * w, 2 * w, 3, padding=1)
        self.c2 = Conv2d(rng, 2 * w, w, 3, padding=1)
        self.c3 = Conv2d(rng, w, w, 3, padding=1)
        self.c4 = Conv2d(rng, w, 1, 3, padding=1)
        self.last_content = None  # debug tap: f_content of the latest forward

    def __call__(self, image: Tensor) -> DiscriminatorOutput:
        if image.data.ndim != 4 or image.data.shape[1] != 3:
            raise ShapeError(f"discriminator: expected [N,3,H,W], got {image.data.shape}")
        n = image.data.shape[0]
        h = T.leaky_relu(self.t1(image), 0.2)
        h = T.leaky_relu(self.t2(h), 0.2)
        trunk = T.leaky_relu(self.t3(h), 0.2)
        rf = T.leaky_relu(self.real_conv(trunk), 0.2)
        pooled = T.reshape(T.tmean(rf, axes=(2, 3), keepdims=True), (n, rf.data.shape[1]))
        realness = self.real_head(pooled)
        if self.use_idn:
            mu, sigma, f_content = idn_forward(trunk, self.idn, self.cfg.eps)
            c = trunk.data.shape[1]
            moments = T.concat([T.reshape(mu, (n, c)), T.reshape(sigma, (n, c))], axis=1)
            style_in = moments
            content_in = f_content
        else:
            sf = T.leaky_relu(self.style_conv(trunk), 0.2)
            style_in = T.reshape(T.tmean(sf, axes=(2, 3), keepdims=True), (n, sf.data.shape[1]))
            content_in = trunk
        self.last_content = content_in
        style_vec = self.style_fc2(T.leaky_relu(self.style_fc1(style_in), 0.2))
        s = T.leaky_relu(self.c1(content_in), 0.2)
        s = T.leaky_relu(self.c2(T.upsample_nearest(s, 2)), 0.2)
        s = T.leaky_relu(self.c3(T.upsample_nearest(s, 2)), 0.2)
        sketch_pred = T.sigmoid(self.c4(T.upsample_nearest(s, 2)))
        return DiscriminatorOutput(style_vec=style_vec, sketch_pred=sketch_pred,
                                   realness_logit=realness)


def discriminate(d: Discriminator, image: Tensor) -> DiscriminatorOutput:
    return d(image)


def build_models(config: TrainConfig):
    rng_g = np.random.default_rng([config.seed, 0x6])
    rng_d = np.random.default_rng([config.seed, 0xD])
    g = Generator(rng_g, config.model, use_dmi=config.dmi, use_fmt=config.fmt)
    d = Discriminator(rng_d, config.model, use_idn=config.idn)
    return g, d
