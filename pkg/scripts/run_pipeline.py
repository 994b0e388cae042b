#!/usr/bin/env python3
"""Generate a dataset, train, evaluate, and benchmark in one pass.

Defaults reproduce the smoke-run protocol (64x64 rig, 64 frames, 2000
training steps, roughly half an hour on a desktop CPU); --quick shrinks
everything to a couple of minutes for a trial run.
"""

import argparse
import sys
from pathlib import Path

from mvinpaint.cli import main as cli

QUICK = """\
width = 32
height = 32
n_frames = 8
steps = 120
val_frames = 2
log_every = 40
"""


def run(work: Path, quick: bool, seed: int) -> None:
    work.mkdir(parents=True, exist_ok=True)
    cfg = work / "pipeline_config.txt"
    cfg.write_text(QUICK if quick else "# package defaults\n")

    dataset = work / "dataset"
    ckpt = work / "train" / "ckpt"
    stages = [
        ["generate", "--config", str(cfg), "--seed", str(seed), "--out", str(dataset)],
        ["train", "--config", str(cfg), "--seed", str(seed),
         "--dataset", str(dataset), "--out", str(work / "train")],
        ["eval", "--checkpoint", str(ckpt), "--dataset", str(dataset),
         "--out", str(work / "eval")],
        ["bench", "--checkpoint", str(ckpt), "--dataset", str(dataset),
         "--out", str(work / "bench")],
    ]
    for argv in stages:
        print(f"\n$ mvinpaint {' '.join(argv)}", flush=True)
        rc = cli(argv)
        if rc != 0:
            sys.exit(rc)
    print(f"\nartifacts under {work}: dataset/, train/, eval/eval.csv, bench/bench.csv")


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=Path("runs/pipeline"),
                    help="working directory for all artifacts")
    ap.add_argument("--quick", action="store_true",
                    help="small scene and short training for a trial run")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    run(args.out, args.quick, args.seed)
