"""Streaming inference: feature cache, per-frame stepping, eval, benchmark.

Frames arrive in timestep order. Each step encodes only streams the cache has
not seen, runs the transformer, and composites the output; maps older than
the temporal window are evicted afterwards. The benchmark replays a stream at
several retention ratios and reports wall-clock rate, attention MACs, and
image quality.
"""

import math
import time

import numpy as np

from .config import RunConfig
from .decoding import to_chw
from .errors import DataError
from .metrics import psnr, ssim
from .model import FrameResult, forward_frame
from .tensor import no_grad


class FeatureCache:
    """Keyed (camera_id, timestep) store for encoded feature maps.

    Counts encoder invocations through its miss/insert traffic; a disabled
    cache never hits, which turns the counter into the no-cache baseline.
    """

    def __init__(self, cfg: RunConfig, enabled=True):
        self.enabled = enabled
        self.span = cfg.window_span()
        self._store = {}
        self.encode_count = 0
        self._grid = None

    def get(self, key):
        return self._store.get(key) if self.enabled else None

    def __setitem__(self, key, entry):
        self.encode_count += 1
        grid = entry.fm.grid_hw
        if self._grid is None:
            self._grid = grid
        elif grid != self._grid:
            raise DataError(
                f"cache integrity: feature map grid {grid} != expected {self._grid}"
            )
        if self.enabled:
            self._store[key] = entry

    def __len__(self):
        return len(self._store)

    def gc(self, t: int) -> None:
        """Drop every entry strictly older than the reachable window."""
        cutoff = t - self.span
        for key in [k for k in self._store if k[1] < cutoff]:
            del self._store[key]

    def timesteps(self):
        return sorted({k[1] for k in self._store})


class CachedDataset:
    """In-memory view of a dataset so benchmarks exclude disk reads."""

    def __init__(self, base):
        self._base = base
        self._frames = {}
        self._novels = {}
        self._pdepths = {}
        self.cameras = base.cameras
        self.manifest = base.manifest
        self.N, self.W, self.H, self.T = base.N, base.W, base.H, base.T
        self.target_cam = base.target_cam

    def input_ids(self):
        return self._base.input_ids()

    def frame(self, cam_id, t):
        key = (cam_id, t)
        if key not in self._frames:
            self._frames[key] = self._base.frame(cam_id, t)
        return self._frames[key]

    def novel(self, t):
        if t not in self._novels:
            self._novels[t] = self._base.novel(t)
        return self._novels[t]

    def gt(self, t):
        return self.frame(self.target_cam, t)

    def pdepth(self, cam_id, t):
        key = (cam_id, t)
        if key not in self._pdepths:
            self._pdepths[key] = self._base.pdepth(cam_id, t)
        return self._pdepths[key]

    def preload(self):
        for t in range(self.T):
            self.novel(t)
            for cam in range(1, self.N + 1):
                self.frame(cam, t)
                self.pdepth(cam, t)
        return self


def stream_step(t, dataset, params, cfg: RunConfig, cache: FeatureCache,
                rho=None) -> FrameResult:
    """Advance the stream to frame ``t`` and inpaint it."""
    if not 0 <= t < dataset.T:
        raise DataError(f"stream gap: frame {t} outside the available range [0, {dataset.T})")
    res = forward_frame(t, dataset, params, cfg, cache=cache, rho=rho)
    cache.gc(t)
    return res


def run_stream(dataset, params, cfg: RunConfig, *, rho=None, use_cache=True,
               frames=None, collect=None):
    """Play frames in order; returns (per-frame stats, per-frame seconds, cache).

    ``collect`` is an optional callback receiving (t, FrameResult) for
    callers that need images; its cost is kept out of the frame timings.
    """
    cache = FeatureCache(cfg, enabled=use_cache)
    frames = range(dataset.T) if frames is None else frames
    stats, times = [], []
    with no_grad():
        for t in frames:
            start = time.perf_counter()
            res = stream_step(t, dataset, params, cfg, cache, rho=rho)
            times.append(time.perf_counter() - start)
            stats.append(res.stats)
            if collect is not None:
                collect(t, res)
    return stats, times, cache


def evaluate(dataset, params, cfg: RunConfig, *, rho=None, use_cache=True, frames=None):
    """Score a stream against ground truth; returns (per-frame rows, summary).

    Hole metrics use the error mask; frames whose mask is empty score an
    infinite PSNR and are skipped in the summary means.
    """
    rows = []

    def measure(t, res: FrameResult):
        gt = to_chw(dataset.gt(t).rgb)
        out = res.f_hat.data
        rows.append({
            "frame": t,
            "psnr_full": psnr(out, gt),
            "ssim_full": ssim(out, gt),
            "psnr_in": psnr(out, gt, mask=res.err),
            "ssim_in": ssim(out, gt, mask=res.err),
        })

    stats, times, cache = run_stream(dataset, params, cfg, rho=rho, use_cache=use_cache,
                                     frames=frames, collect=measure)
    summary = {"fps": 1.0 / float(np.median(times)) if times else math.inf,
               "macs": int(sum(s["macs_total"] for s in stats)),
               "macs_post": int(sum(s["macs_post"] for s in stats)),
               "encode_count": cache.encode_count}
    for key in ("psnr_full", "ssim_full", "psnr_in", "ssim_in"):
        vals = [r[key] for r in rows if math.isfinite(r[key])]
        summary[key] = float(np.mean(vals)) if vals else math.inf
    return rows, summary


def bench(dataset, params, cfg: RunConfig, rhos, *, repeats=3):
    """Speed/quality table over the retention knob.

    Each ratio gets one warmup pass (which also yields the quality metrics;
    outputs do not vary between repeats) and ``repeats`` timed passes. The
    rate is 1 / median per-frame wall time, median again across passes.
    """
    data = dataset if isinstance(dataset, CachedDataset) else CachedDataset(dataset)
    data.preload()
    table = []
    for rho in rhos:
        _, summary = evaluate(data, params, cfg, rho=rho)
        rates = []
        for _ in range(repeats):
            _, times, _ = run_stream(data, params, cfg, rho=rho)
            rates.append(1.0 / float(np.median(times)))
        fps = float(np.median(rates))
        table.append({"rho": rho, "fps": fps, "macs": summary["macs"],
                      "macs_post": summary["macs_post"],
                      "psnr_full": summary["psnr_full"], "ssim_full": summary["ssim_full"],
                      "psnr_in": summary["psnr_in"], "ssim_in": summary["ssim_in"]})
    return table


def write_bench_csv(path, table) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["rho", "fps", "macs", "psnr_full", "ssim_full", "psnr_in", "ssim_in"])
        for r in table:
            w.writerow([r["rho"], repr(r["fps"]), r["macs"], repr(r["psnr_full"]),
                        repr(r["ssim_full"]), repr(r["psnr_in"]), repr(r["ssim_in"])])


def write_eval_csv(path, rows) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame", "psnr_full", "ssim_full", "psnr_in", "ssim_in"])
        for r in rows:
            w.writerow([r["frame"], repr(r["psnr_full"]), repr(r["ssim_full"]),
                        repr(r["psnr_in"]), repr(r["ssim_in"])])
