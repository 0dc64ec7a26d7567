#!/usr/bin/env python3
"""Single full desk-scale run: render the corpus, train with the default
configuration, and write the run directory with report + samples.

Usage: python3 scripts/run_desk_experiment.py --out runs/desk [--seed 0]
"""

import argparse
import sys
import time

from sketchstyle.config import CorpusSpec, TrainConfig
from sketchstyle.data import generate_corpus
from sketchstyle.train import train


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", required=True, help="run directory to create")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--n-images", type=int, default=512)
    ap.add_argument("--epochs", type=int, default=None)
    args = ap.parse_args(argv)

    t0 = time.time()
    ds = generate_corpus(CorpusSpec(n_images=args.n_images, seed=args.seed))
    print(f"corpus: {args.n_images} images, "
          f"{len(ds.indices('train'))} train / {len(ds.indices('test'))} test "
          f"({time.time() - t0:.1f}s)")

    cfg = TrainConfig(seed=args.seed)
    if args.epochs is not None:
        cfg.epochs = args.epochs

    def progress(epoch, step, last):
        print(f"epoch {epoch + 1}/{cfg.epochs} step {step} "
              f"d={last['d_loss']:.3f} g={last['g_loss']:.3f} "
              f"recon={last['recon']:.4f}", flush=True)

    _, _, _, report = train(ds, cfg, run_dir=args.out, progress=progress)
    print(report.to_text(), end="")
    print(f"total wall clock {time.time() - t0:.1f}s; artifacts in {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
