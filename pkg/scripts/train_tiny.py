#!/usr/bin/env python3
"""Train the tiny conv denoisers on a generated dataset and report loss and analytic-loss gap.

    python3 scripts/train_tiny.py --dataset runs/desk/data --out runs/weights [--epochs 200]
"""

import argparse

from cfdiff import harness
from cfdiff.config import load_config
from cfdiff.denoiser import AnalyticDenoiser, denoising_loss
from cfdiff.rng import SeededRng
from cfdiff.tiny import TinyDenoiser


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--dataset", required=True)
    ap.add_argument("--out", required=True)
    ap.add_argument("--config", default=None)
    ap.add_argument("--epochs", type=int, default=None)
    args = ap.parse_args()

    cfg = load_config(args.config, **({"train__epochs": args.epochs} if args.epochs is not None else {}))
    res = harness.cmd_train(cfg, args.out, dataset_dir=args.dataset)
    for name, r in res.items():
        print(f"{name}: {len(r['losses'])} epochs in {r['seconds']:.0f}s, "
              f"loss {r['losses'][0]:.4f} -> {r['losses'][-1]:.4f}")

    test = harness.load_dataset(args.dataset)["test"]
    if len(test):
        args_ = (test.images, test.brain, test.pathology, cfg.schedule)
        la = denoising_loss(AnalyticDenoiser(cfg.phantom, cfg.schedule), *args_, SeededRng(0))
        lt = denoising_loss(TinyDenoiser(res["denoiser"]["weights"]), *args_, SeededRng(0))
        print(f"held-out denoising loss: analytic {la:.4f}, trained {lt:.4f}")


if __name__ == "__main__":
    main()
