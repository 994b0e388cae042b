#!/usr/bin/env python3
"""Train the full model and ablated variants under matched seeds and steps,
then rank them by inpainted-region PSNR on the held-out validation tail.

The default variant set covers the two orderings the model is built around
(full vs no-rope, full vs single-cam); --all adds the remaining switches.
"""

import argparse
import math
import sys
from pathlib import Path

import numpy as np

from mvinpaint.cli import main as cli
from mvinpaint.data import Dataset
from mvinpaint.model import load_model
from mvinpaint.runtime import CachedDataset, evaluate
from mvinpaint.training import validation_frames


def holdout_psnr_in(ckpt: Path, data: CachedDataset) -> float:
    params, cfg, _ = load_model(ckpt)
    rows, _ = evaluate(data, params, cfg, frames=validation_frames(data, cfg))
    vals = [r["psnr_in"] for r in rows if math.isfinite(r["psnr_in"])]
    return float(np.mean(vals)) if vals else math.inf


def run(work: Path, variants, quick: bool, seed: int) -> None:
    work.mkdir(parents=True, exist_ok=True)
    cfg = work / "ablation_config.txt"
    if quick:
        cfg.write_text("width = 32\nheight = 32\nn_frames = 8\nsteps = 120\n"
                       "val_frames = 2\nlog_every = 40\n")
    else:
        cfg.write_text("# package defaults\n")

    dataset = work / "dataset"
    rc = cli(["generate", "--config", str(cfg), "--seed", str(seed), "--out", str(dataset)])
    if rc != 0:
        sys.exit(rc)

    scores = {}
    data = CachedDataset(Dataset(dataset)).preload()
    for name in variants:
        run_dir = work / (name or "full")
        argv = ["train", "--config", str(cfg), "--seed", str(seed),
                "--dataset", str(dataset), "--out", str(run_dir)]
        if name:
            argv += ["--ablate", name]
        print(f"\n$ mvinpaint {' '.join(argv)}", flush=True)
        if cli(argv) != 0:
            sys.exit(1)
        scores[name or "full"] = holdout_psnr_in(run_dir / "ckpt", data)

    print("\nheld-out inpainted-region PSNR (matched seed and steps):")
    for name, score in sorted(scores.items(), key=lambda kv: -kv[1]):
        print(f"  {name:<12} {score:7.3f} dB")
    if "full" in scores:
        for name, score in scores.items():
            if name != "full":
                print(f"  full - {name}: {scores['full'] - score:+.3f} dB")


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=Path("runs/ablation"))
    ap.add_argument("--all", action="store_true",
                    help="also train the no-masks and no-temporal variants")
    ap.add_argument("--quick", action="store_true",
                    help="small scene and short training for a trial run")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    names = [None, "no-rope", "single-cam"]
    if args.all:
        names += ["no-masks", "no-temporal"]
    run(args.out, names, args.quick, args.seed)
