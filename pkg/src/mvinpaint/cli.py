"""Command-line entry point: generate, train, infer, eval, bench.

Precedence for settings is defaults < config file < command-line flags. The
``infer``/``eval``/``bench`` commands take their architecture from the
checkpoint instead; a config file passed to them may only change runtime keys
(any other key it sets must match the stored value). Every command writes
``config.txt`` (the resolved config plus its hash) into the output directory.

Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure.
"""

import argparse
import dataclasses
import math
import sys
from pathlib import Path

import numpy as np

from .config import (
    RUNTIME_KEYS,
    apply_ablation,
    config_hash,
    config_pairs,
    load_config,
    save_config,
)
from .data import Dataset, dataset_write
from .errors import ConfigError, DataError, MVInpaintError, NumericError
from .model import init_generator, load_model, save_model
from .runtime import (
    CachedDataset,
    bench,
    evaluate,
    run_stream,
    write_bench_csv,
    write_eval_csv,
)
from .training import train, write_metrics_csv

_ABLATION_CHOICES = ("single-cam", "no-masks", "no-temporal", "no-rope")


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _echo(cfg, out: Path) -> None:
    save_config(cfg, out / "config.txt")
    print(f"config sha256:{config_hash(cfg)}")


def _base_cfg(args):
    """Config for commands without a checkpoint: file plus flag overrides."""
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if getattr(args, "steps", None) is not None:
        overrides["steps"] = args.steps
    if getattr(args, "rho", None) is not None:
        overrides["rho"] = args.rho
    if getattr(args, "no_cache", False):
        overrides["use_cache"] = False
    if getattr(args, "deterministic", False):
        overrides["deterministic"] = True
    cfg = load_config(args.config, overrides)
    if getattr(args, "ablate", None):
        cfg = apply_ablation(cfg, args.ablate)
    return cfg


def _checkpoint_cfg(args):
    """Config for commands driven by a checkpoint: stored architecture plus
    runtime overrides from the config file and flags."""
    params, cfg, _ = load_model(args.checkpoint)
    if args.config:
        for key, val in config_pairs(Path(args.config).read_text()).items():
            if key in RUNTIME_KEYS:
                cfg = dataclasses.replace(cfg, **{key: val})
            elif getattr(cfg, key) != val:
                raise ConfigError(
                    f"config key {key}={val} conflicts with the checkpoint value "
                    f"{getattr(cfg, key)}; architecture keys are pinned by the checkpoint"
                )
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    if args.rho is not None:
        cfg = dataclasses.replace(cfg, rho=args.rho)
    if args.no_cache:
        cfg = dataclasses.replace(cfg, use_cache=False)
    if args.deterministic:
        cfg = dataclasses.replace(cfg, deterministic=True)
    return params, cfg


def _handshake(cfg, ds) -> None:
    want = (cfg.width, cfg.height, cfg.n_cameras, cfg.target_cam)
    got = (ds.W, ds.H, ds.N, ds.target_cam)
    if want != got:
        raise DataError(
            f"shape handshake failed: config expects (W,H,N,target)={want}, "
            f"dataset provides {got}"
        )


def _stream_rho(cfg):
    """Full retention routes through the dense path (they agree bitwise)."""
    return None if cfg.rho >= 1.0 else cfg.rho


def _write_ppm(path, img_chw) -> None:
    byte = (np.clip(img_chw, 0.0, 1.0) * 255.0).round().astype(np.uint8)
    hwc = np.ascontiguousarray(byte.transpose(1, 2, 0))
    with open(path, "wb") as fh:
        fh.write(f"P6 {hwc.shape[1]} {hwc.shape[0]} 255\n".encode())
        fh.write(hwc.tobytes())


# ---------------------------------------------------------------------
# commands


def cmd_generate(args) -> int:
    cfg = _base_cfg(args)
    out = _out_dir(args)
    dataset_write(cfg.scene_spec(), out)
    ds = Dataset(out)
    coverage = [float(ds.novel(t).error_mask.mean()) for t in range(ds.T)]
    _echo(cfg, out)
    print(f"dataset: {ds.N} cameras ({len(ds.input_ids())} input + 1 target), "
          f"{ds.T} frames, {ds.W}x{ds.H}")
    print(f"hole coverage: mean {100 * np.mean(coverage):.2f}% of pixels "
          f"(min {100 * min(coverage):.2f}%, max {100 * max(coverage):.2f}%)")
    return 0


def cmd_train(args) -> int:
    cfg = _base_cfg(args)
    ds = Dataset(args.dataset)
    _handshake(cfg, ds)
    out = _out_dir(args)
    _echo(cfg, out)

    def progress(rec):
        if not math.isnan(rec["psnr_val"]):
            print(f"step {rec['step'] + 1}/{cfg.steps}: L_in {rec['l_in']:.4f} "
                  f"L_out {rec['l_out']:.4f} d {rec['d_loss']:.4f} g {rec['g_loss']:.4f} "
                  f"psnr_val {rec['psnr_val']:.2f}")

    params, _, rows = train(ds, cfg, rho=_stream_rho(cfg), on_step=progress)
    save_model(out / "ckpt", params, cfg, extra={"steps_run": str(len(rows))})
    write_metrics_csv(out / "train_metrics.csv", rows)
    print(f"checkpoint written to {out / 'ckpt'} ({len(rows)} steps)")
    return 0


def cmd_infer(args) -> int:
    params, cfg = _checkpoint_cfg(args)
    ds = Dataset(args.dataset)
    _handshake(cfg, ds)
    out = _out_dir(args)
    frames_dir = out / "frames"
    frames_dir.mkdir(exist_ok=True)
    _echo(cfg, out)

    count = 0

    def save(t, res):
        nonlocal count
        _write_ppm(frames_dir / f"frame_{t:04d}.ppm", res.f_hat.data)
        count += 1

    run_stream(ds, params, cfg, rho=_stream_rho(cfg), use_cache=cfg.use_cache,
               collect=save)
    print(f"wrote {count} frames to {frames_dir}")
    return 0


def cmd_eval(args) -> int:
    params, cfg = _checkpoint_cfg(args)
    ds = CachedDataset(Dataset(args.dataset)).preload()
    _handshake(cfg, ds)
    out = _out_dir(args)
    _echo(cfg, out)
    rows, summary = evaluate(ds, params, cfg, rho=_stream_rho(cfg),
                             use_cache=cfg.use_cache)
    write_eval_csv(out / "eval.csv", rows)
    print(f"frames {len(rows)}  psnr_full {summary['psnr_full']:.3f}  "
          f"ssim_full {summary['ssim_full']:.4f}  psnr_in {summary['psnr_in']:.3f}  "
          f"ssim_in {summary['ssim_in']:.4f}  fps {summary['fps']:.2f}")
    return 0


def cmd_bench(args) -> int:
    params, cfg = _checkpoint_cfg(args)
    ds = CachedDataset(Dataset(args.dataset)).preload()
    _handshake(cfg, ds)
    out = _out_dir(args)
    _echo(cfg, out)
    if args.rho is not None:
        rhos = [args.rho]
    else:
        try:
            rhos = [float(s) for s in cfg.bench_rhos.split(",") if s.strip()]
        except ValueError:
            raise ConfigError(f"bench_rhos is not a ratio list: {cfg.bench_rhos!r}") from None
    table = bench(ds, params, cfg, rhos)
    write_bench_csv(out / "bench.csv", table)
    for row in table:
        print(f"rho {row['rho']:<5} fps {row['fps']:7.2f}  macs {row['macs']:>14}  "
              f"psnr_in {row['psnr_in']:.3f}  ssim_in {row['ssim_in']:.4f}")
    return 0


# ---------------------------------------------------------------------
# argument plumbing


def _common_flags(p, *, checkpoint=False, dataset=False, train_flags=False):
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", required=True, help="output directory")
    if dataset:
        p.add_argument("--dataset", required=True, help="dataset directory")
    if checkpoint:
        p.add_argument("--checkpoint", required=True, help="checkpoint directory")
    if train_flags:
        p.add_argument("--steps", type=int, help="override the training step count")
        p.add_argument("--ablate", choices=_ABLATION_CHOICES,
                       help="disable one model ingredient")
    p.add_argument("--rho", type=float,
                   help="context retention ratio in (0, 1]; bench: single-point sweep")
    p.add_argument("--no-cache", action="store_true", dest="no_cache",
                   help="disable the streaming feature cache")
    p.add_argument("--deterministic", action="store_true",
                   help="record deterministic mode in the resolved config")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mvinpaint",
        description="Multi-view transformer inpainting on a synthetic streaming rig.",
        epilog="exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="render a synthetic dataset")
    _common_flags(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train a model on a dataset")
    _common_flags(p, dataset=True, train_flags=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="stream a dataset and write inpainted frames")
    _common_flags(p, dataset=True, checkpoint=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="score a streamed dataset against ground truth")
    _common_flags(p, dataset=True, checkpoint=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="sweep retention ratios and time the stream")
    _common_flags(p, dataset=True, checkpoint=True)
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4
    except MVInpaintError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
