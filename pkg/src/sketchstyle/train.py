"""Training loop (alternating D/G with paired and unpaired batches),
evaluation driver, and run-directory reporting."""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .config import TrainConfig
from .data import Dataset, extract_sketch, save_png
from .errors import TrainingFailure
from .losses import d_loss, g_loss
from .metrics import GaussianStats, frechet_distance, gram_l2, edge_l1, pdar
from .models import (Discriminator, Generator, StyleEncoder, build_models,
                     extract_style, train_encoder)
from .optim import Adam
from .tensor import Tensor, backward
from .tensorio import load_checkpoint, restore_params, save_checkpoint


@dataclass
class RunReport:
    rows: list = field(default_factory=list)       # metric table
    loss_curves: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    wall_clock: float = 0.0

    def add(self, metric: str, split: str, value: float, n: int, seed: int):
        self.rows.append({"metric": metric, "split": split, "value": float(value),
                          "n": int(n), "seed": int(seed)})

    def value(self, metric: str, split: str = "test") -> float:
        for r in self.rows:
            if r["metric"] == metric and r["split"] == split:
                return r["value"]
        raise KeyError(metric)

    def to_text(self) -> str:
        lines = [f"{r['metric']}/{r['split']}={r['value']:.6g} n={r['n']} seed={r['seed']}"
                 for r in self.rows]
        lines.append(f"wall_clock={self.wall_clock:.1f}")
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        return json.dumps({"rows": self.rows, "loss_curves": self.loss_curves,
                           "config": self.config, "wall_clock": self.wall_clock}, indent=2)


def _param_census(*modules):
    lines = []
    for m in modules:
        for name, p in m.named_parameters():
            lines.append(f"{name}: |w|={float(np.abs(p.data).mean()):.4g} "
                         f"|g|={float(np.abs(p.grad).mean()):.4g}")
    return "\n".join(lines)


def train_step(g: Generator, d: Discriminator, e: StyleEncoder, ds: Dataset,
               pair_idx, u_sketch_idx, u_style_idx, cfg: TrainConfig,
               opt_g: Adam, opt_d: Adam) -> dict:
    """One D update then one G update over a paired and an unpaired batch."""
    w = cfg.weights
    imgs_p = Tensor(ds.images[pair_idx])
    sk_p = Tensor(ds.sketches[pair_idx])
    bundle_p = extract_style(e, imgs_p)
    style_u = Tensor(ds.images[u_style_idx])
    sk_u = Tensor(ds.sketches[u_sketch_idx])
    bundle_u = extract_style(e, style_u)

    fake_p = g(sk_p, bundle_p)
    fake_u = g(sk_u, bundle_u)

    # --- D phase: fakes detached
    out_real = d(imgs_p)
    out_fake_det = d(Tensor(np.concatenate([fake_p.data, fake_u.data])))
    dl = d_loss(out_real, out_fake_det, bundle_p.style_vec, sk_p)
    g.zero_grad()
    d.zero_grad()
    backward(dl)
    opt_d.step()

    # --- G phase: gradients flow through D into G
    out_fp = d(fake_p)
    out_fu = d(fake_u)
    gl_p = g_loss(out_fp, bundle_p.style_vec, sk_p, fake_p, imgs_p, True, w)
    gl_u = g_loss(out_fu, bundle_u.style_vec, sk_u, fake_u, style_u, False, w)
    gl = T.mul(Tensor(0.5), T.add(gl_p, gl_u))
    g.zero_grad()
    d.zero_grad()
    backward(gl)
    opt_g.step()

    record = {
        "d_loss": dl.item(),
        "g_loss": gl.item(),
        "g_loss_paired": gl_p.item(),
        "g_loss_unpaired": gl_u.item(),
        "recon": float(np.mean((fake_p.data - imgs_p.data) ** 2)),
    }
    if not all(np.isfinite(v) for v in record.values()):
        raise TrainingFailure(
            "non-finite loss; paired batch " + str(list(map(int, pair_idx))) +
            "\nparameter norm census:\n" + _param_census(g, d))
    return record


def _sample_grid(g, e, ds, path, rng):
    test_idx = ds.indices("test")
    sel = test_idx[:4]
    refs = test_idx[-4:]
    with T.no_grad():
        bundle = extract_style(e, Tensor(ds.images[refs]))
        out = g(Tensor(ds.sketches[sel]), bundle)
    tiles = [np.concatenate([np.repeat(ds.sketches[i] * 2 - 1, 3, axis=0), o, ds.images[j]],
                            axis=2)
             for i, o, j in zip(sel, out.data, refs)]
    save_png(np.concatenate(tiles, axis=1), path)


def _checkpoint(path, g, d, e, cfg: TrainConfig, step: int):
    named = ([(f"e.{n}", p) for n, p in e.named_parameters()] +
             [(f"g.{n}", p) for n, p in g.named_parameters()] +
             [(f"d.{n}", p) for n, p in d.named_parameters()])
    save_checkpoint(path, named, cfg.to_dict(), step, cfg.seed)


def load_models(path):
    """Rebuild (cfg, e, g, d) from a checkpoint file."""
    manifest, tensors = load_checkpoint(path)
    cfg = TrainConfig.from_dict(manifest["config"])
    e = StyleEncoder(np.random.default_rng(0), cfg.model)
    g, d = build_models(cfg)
    restore_params(e, {k[2:]: v for k, v in tensors.items() if k.startswith("e.")})
    restore_params(g, {k[2:]: v for k, v in tensors.items() if k.startswith("g.")})
    restore_params(d, {k[2:]: v for k, v in tensors.items() if k.startswith("d.")})
    e.trained = True
    e.freeze()
    return cfg, e, g, d


def train(ds: Dataset, cfg: TrainConfig, run_dir=None, encoder: StyleEncoder = None,
          progress=None) -> tuple:
    """Full run: encoder, GAN epochs, checkpoints, report.  Returns
    (e, g, d, report)."""
    t0 = time.time()
    if run_dir:
        os.makedirs(os.path.join(run_dir, "checkpoints"), exist_ok=True)
        os.makedirs(os.path.join(run_dir, "samples"), exist_ok=True)
        with open(os.path.join(run_dir, "config.json"), "w") as f:
            json.dump(cfg.to_dict(), f, indent=2)
    e = encoder if encoder is not None else train_encoder(ds, cfg)
    e_sum = e.checksum()
    g, d = build_models(cfg)
    opt_g = Adam(g.parameters(), cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
    opt_d = Adam(d.parameters(), cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
    train_idx = ds.indices("train")
    b = cfg.batch_size
    curves = {k: [] for k in ("d_loss", "g_loss", "g_loss_paired", "g_loss_unpaired", "recon")}
    step = 0
    for epoch in range(cfg.epochs):
        rng = np.random.default_rng([cfg.seed, 0x5E9, epoch])
        order_p = rng.permutation(train_idx)
        order_s = rng.permutation(train_idx)
        order_y = rng.permutation(train_idx)
        for i in range(0, len(train_idx) - b + 1, b):
            rec = train_step(g, d, e, ds, order_p[i:i + b], order_s[i:i + b],
                             order_y[i:i + b], cfg, opt_g, opt_d)
            for k, v in rec.items():
                curves[k].append(v)
            step += 1
        if progress:
            progress(epoch, step, {k: v[-1] for k, v in curves.items()})
        if run_dir:
            _sample_grid(g, e, ds, os.path.join(run_dir, "samples", f"epoch_{epoch:03d}.png"),
                         np.random.default_rng([cfg.seed, epoch]))
            if (epoch + 1) % cfg.checkpoint_every == 0 and epoch + 1 < cfg.epochs:
                _checkpoint(os.path.join(run_dir, "checkpoints", f"step_{step:06d}.ckpt"),
                            g, d, e, cfg, step)
    assert e.checksum() == e_sum, "frozen encoder drifted during GAN training"
    report = evaluate(g, e, ds, seed=cfg.seed)
    report.loss_curves = curves
    report.config = cfg.to_dict()
    report.wall_clock = time.time() - t0
    report.add("encoder_accuracy", "test", getattr(e, "val_accuracy", float("nan")),
               len(ds.indices("test")), cfg.seed)
    if run_dir:
        _checkpoint(os.path.join(run_dir, "checkpoints", "final.ckpt"), g, d, e, cfg, step)
        with open(os.path.join(run_dir, "report.txt"), "w") as f:
            f.write(report.to_text())
        with open(os.path.join(run_dir, "report.json"), "w") as f:
            f.write(report.to_json())
    return e, g, d, report


def _batched_generate(g, e, ds, sketch_idx, ref_idx, batch=16):
    """Generate from every sketch in ``sketch_idx`` with one reference
    style image; returns [n,3,R,R]."""
    ref = Tensor(ds.images[ref_idx][None])
    with T.no_grad():
        bundle = extract_style(e, ref)
        outs = []
        for i in range(0, len(sketch_idx), batch):
            sel = sketch_idx[i:i + batch]
            outs.append(g(Tensor(ds.sketches[sel]), bundle).data)
    return np.concatenate(outs)


def evaluate(g: Generator, e: StyleEncoder, ds: Dataset, seed: int = 0,
             split: str = "test") -> RunReport:
    """Per-style generation from every test sketch with one reference
    image, then the metric battery."""
    report = RunReport()
    idx = ds.indices(split)
    styles = [s for s in range(ds.n_styles) if np.any(ds.labels[idx] == s)]
    n_styles = len(styles)
    real_feats = {}
    with T.no_grad():
        for s in styles:
            sel = idx[ds.labels[idx] == s]
            vec, _ = e.features(Tensor(ds.images[sel]))
            real_feats[s] = vec.data
    cls_scores, fre_within, fre_cross = [], [], []
    grams, pdars, pdars_shuf, l1s = [], [], [], []
    for s in styles:
        style_idx = idx[ds.labels[idx] == s]
        ref_idx = int(style_idx[0])
        gen = _batched_generate(g, e, ds, idx, ref_idx)
        preds = e.classify(gen)
        cls_scores.append(float(np.mean(preds == s)))
        with T.no_grad():
            gvec, gtaps = e.features(Tensor(gen))
            _, rtaps = e.features(Tensor(ds.images[ref_idx][None]))
        gstats = GaussianStats.from_features(gvec.data)
        fre_within.append(frechet_distance(gstats, GaussianStats.from_features(real_feats[s])))
        fre_cross.extend(frechet_distance(gstats, GaussianStats.from_features(real_feats[t]))
                         for t in styles if t != s)
        tap_res = min(gtaps)
        gtap = gtaps[tap_res].data
        rtap = rtaps[tap_res].data
        grams.append(float(np.mean([gram_l2(gtap[i][None], rtap) for i in range(len(gtap))])))
        shifted = np.roll(idx, 1)
        for i, (gi, si, ri) in enumerate(zip(gen, idx, shifted)):
            gs = extract_sketch(gi).data
            pdars.append(pdar(gs, ds.sketches[si]))
            pdars_shuf.append(pdar(gs, ds.sketches[ri]))
            l1s.append(edge_l1(gs, ds.sketches[si]))
    n = len(idx)
    report.add("classification_score", split, float(np.mean(cls_scores)), n * n_styles, seed)
    report.add("frechet_within", split, float(np.mean(fre_within)), n * n_styles, seed)
    report.add("frechet_cross", split, float(np.mean(fre_cross)), n * n_styles, seed)
    report.add("gram_l2_to_reference", split, float(np.mean(grams)), n * n_styles, seed)
    report.add("pdar", split, float(np.mean(pdars)), len(pdars), seed)
    report.add("pdar_shuffled", split, float(np.mean(pdars_shuf)), len(pdars_shuf), seed)
    report.add("edge_l1", split, float(np.mean(l1s)), len(l1s), seed)
    return report
