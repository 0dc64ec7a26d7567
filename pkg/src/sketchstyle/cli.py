"""Command-line interface.

Exit codes: 0 success, 1 validation failure (contract/shape/numeric/
training errors), 2 I/O or config errors.  Failures emit one
machine-readable line on stderr: ``sketchstyle-error kind=<K> message=<M>``.
"""

from __future__ import annotations

import functools
import json
import sys

import click
import numpy as np

from .config import CorpusSpec, TrainConfig
from .data import Dataset, extract_sketch, generate_corpus, load_png, save_png
from .errors import (ConfigError, ContractError, IoError, NumericError,
                     ShapeError, SketchStyleError, TrainingFailure)
from .gradcheck import CASES, run_audit
from .goldens_check import verify_manifest
from .models import blend_styles, extract_style
from .tensor import Tensor, no_grad
from .train import evaluate, load_models, train

_EXIT_CODES = {ConfigError: 2, IoError: 2, ContractError: 1, ShapeError: 1,
               NumericError: 1, TrainingFailure: 1}


def _guard(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except SketchStyleError as e:
            kind = type(e).__name__
            msg = str(e).splitlines()[0] if str(e) else kind
            print(f"sketchstyle-error kind={kind} message={json.dumps(msg)}",
                  file=sys.stderr)
            sys.exit(_EXIT_CODES.get(type(e), 1))
    return wrapper


@click.group()
def main():
    """Sketch-to-image style transfer toolkit."""


@main.command("gen-data")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--n", default=512, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--resolution", default=64, show_default=True)
@click.option("--spec", "spec_path", type=click.Path(exists=True),
              help="Full corpus spec JSON; overrides the other options.")
@_guard
def gen_data(out_dir, n, seed, resolution, spec_path):
    """Render the procedural corpus with paired sketches."""
    spec = (CorpusSpec.from_json(spec_path) if spec_path
            else CorpusSpec(n_images=n, seed=seed, resolution=resolution))
    ds = generate_corpus(spec)
    ds.save(out_dir)
    click.echo(f"wrote {len(ds.labels)} images "
               f"({len(ds.indices('train'))} train / {len(ds.indices('test'))} test) "
               f"to {out_dir}")


@main.command("extract-sketch")
@click.argument("image", type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@_guard
def extract_sketch_cmd(image, out_path):
    """Extract the binary contour sketch of an image."""
    sk = extract_sketch(load_png(image))
    save_png(sk.data * 2.0 - 1.0, out_path)
    click.echo(f"wrote sketch ({int(sk.data.sum())} contour pixels) to {out_path}")


@main.command("train")
@click.option("--data", "data_dir", required=True, type=click.Path(exists=True))
@click.option("--out", "run_dir", required=True, type=click.Path())
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--epochs", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--fmt/--no-fmt", "fmt_flag", default=None)
@click.option("--dmi/--no-dmi", "dmi_flag", default=None)
@click.option("--idn/--no-idn", "idn_flag", default=None)
@_guard
def train_cmd(data_dir, run_dir, config_path, epochs, seed, fmt_flag, dmi_flag, idn_flag):
    """Train encoder + GAN on a corpus directory; writes a run directory."""
    cfg = TrainConfig.from_json(config_path) if config_path else TrainConfig()
    if epochs is not None:
        cfg.epochs = epochs
    if seed is not None:
        cfg.seed = seed
    if fmt_flag is not None:
        cfg.fmt = fmt_flag
    if dmi_flag is not None:
        cfg.dmi = dmi_flag
    if idn_flag is not None:
        cfg.idn = idn_flag
    ds = Dataset.load(data_dir)

    def progress(epoch, step, last):
        click.echo(f"epoch {epoch + 1}/{cfg.epochs} step {step} "
                   f"d_loss={last['d_loss']:.4f} g_loss={last['g_loss']:.4f}")

    _, _, _, report = train(ds, cfg, run_dir=run_dir, progress=progress)
    click.echo(report.to_text(), nl=False)


@main.command("synth")
@click.option("--checkpoint", "ckpt", required=True, type=click.Path(exists=True))
@click.option("--sketch", "sketch_path", required=True, type=click.Path(exists=True))
@click.option("--style-image", "style_paths", required=True, multiple=True,
              type=click.Path(exists=True))
@click.option("--weights", "weights_str", default=None,
              help="Comma-separated blend weights, one per style image.")
@click.option("--out", "out_path", required=True, type=click.Path())
@_guard
def synth(ckpt, sketch_path, style_paths, weights_str, out_path):
    """Generate one image from a sketch and one or more style images."""
    _, e, g, _ = load_models(ckpt)
    sk = load_png(sketch_path).data
    mask = Tensor((sk[:1] > 0).astype(np.float32)[None])
    bundles = [extract_style(e, Tensor(load_png(p).data[None])) for p in style_paths]
    if weights_str is not None:
        weights = [float(v) for v in weights_str.split(",")]
        if len(weights) != len(bundles):
            raise ConfigError(f"{len(weights)} weights for {len(bundles)} style images")
    else:
        weights = None
    bundle = bundles[0] if len(bundles) == 1 and weights is None \
        else blend_styles(bundles, weights)
    with no_grad():
        out = g(mask, bundle)
    save_png(out.data[0], out_path)
    click.echo(f"wrote {out_path}")


@main.command("eval")
@click.option("--checkpoint", "ckpt", required=True, type=click.Path(exists=True))
@click.option("--data", "data_dir", required=True, type=click.Path(exists=True))
@click.option("--split", default="test", show_default=True,
              type=click.Choice(["train", "test"]))
@click.option("--out", "out_path", type=click.Path(), default=None)
@_guard
def eval_cmd(ckpt, data_dir, split, out_path):
    """Run the metric battery for a checkpoint on a corpus split."""
    cfg, e, g, _ = load_models(ckpt)
    ds = Dataset.load(data_dir)
    report = evaluate(g, e, ds, seed=cfg.seed, split=split)
    click.echo(report.to_text(), nl=False)
    if out_path:
        with open(out_path, "w") as f:
            f.write(report.to_json())


@main.command("gradcheck")
@click.option("--seeds", default=20, show_default=True)
@click.option("--op", "ops", multiple=True, type=click.Choice(sorted(CASES)))
@click.option("--tolerance", default=1e-3, show_default=True)
@_guard
def gradcheck_cmd(seeds, ops, tolerance):
    """Finite-difference audit of every op's analytic gradient."""
    results = run_audit(list(ops) or None, seeds=seeds)
    failed = []
    for op, err in results.items():
        ok = err < tolerance
        click.echo(f"{'PASS' if ok else 'FAIL'} {op:24s} max_rel_err={err:.3e}")
        if not ok:
            failed.append(op)
    if failed:
        raise ContractError(f"gradient audit failed for {failed}")
    click.echo(f"all {len(results)} ops within {tolerance:g} over {seeds} seeds")


@main.command("goldens-verify")
@click.argument("manifest", type=click.Path(exists=True))
@_guard
def goldens_verify(manifest):
    """Check golden test vectors produced by an external reference."""
    rows = verify_manifest(manifest)
    failed = [r["id"] for r in rows if not r["ok"]]
    for r in rows:
        click.echo(f"{'PASS' if r['ok'] else 'FAIL'} {r['id']:28s} op={r['op']:16s} "
                   f"fwd_err={r['forward_err']:.3e} grad_err={r['grad_err']:.3e}")
    if failed:
        raise ContractError(f"golden mismatch in cases {failed}")
    click.echo(f"all {len(rows)} golden cases match")


if __name__ == "__main__":
    main()
