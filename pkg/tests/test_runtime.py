"""Streaming loop, feature cache behavior, metric tables, CSV artifacts."""

import math
from types import SimpleNamespace

import numpy as np
import pytest

from mvinpaint.config import RunConfig
from mvinpaint.data import Dataset, dataset_write
from mvinpaint.errors import DataError
from mvinpaint.model import init_generator
from mvinpaint.rig import select_context_frames
from mvinpaint.runtime import (
    CachedDataset,
    FeatureCache,
    bench,
    evaluate,
    run_stream,
    stream_step,
    write_bench_csv,
    write_eval_csv,
)

CFG = RunConfig(width=32, height=32, n_frames=8)


@pytest.fixture(scope="module")
def raw_ds(tmp_path_factory):
    out = tmp_path_factory.mktemp("rt_ds")
    dataset_write(CFG.scene_spec(), out)
    return Dataset(out)


@pytest.fixture(scope="module")
def ds(raw_ds):
    return CachedDataset(raw_ds).preload()


@pytest.fixture(scope="module")
def params():
    return init_generator(CFG, 0)


# ---------------------------------------------------------------------
# cache bookkeeping


def _fake_entry(grid=(4, 4)):
    return SimpleNamespace(fm=SimpleNamespace(grid_hw=grid))


def test_cache_counts_and_stores():
    cache = FeatureCache(CFG)
    cache[(1, 0)] = _fake_entry()
    cache[(2, 0)] = _fake_entry()
    assert cache.encode_count == 2 and len(cache) == 2
    assert cache.get((1, 0)) is not None
    assert cache.get((9, 9)) is None


def test_disabled_cache_never_hits_but_still_counts():
    cache = FeatureCache(CFG, enabled=False)
    cache[(1, 0)] = _fake_entry()
    assert cache.encode_count == 1
    assert len(cache) == 0 and cache.get((1, 0)) is None


def test_cache_gc_drops_frames_past_the_window():
    cfg = RunConfig(k_w=2, n_w=2)  # reachable span of 4 steps
    cache = FeatureCache(cfg)
    for tau in range(8):
        cache[(1, tau)] = _fake_entry()
    cache.gc(8)
    assert cache.timesteps() == [4, 5, 6, 7]
    cache.gc(8)  # idempotent
    assert cache.timesteps() == [4, 5, 6, 7]


def test_cache_rejects_mismatched_grids():
    cache = FeatureCache(CFG)
    cache[(1, 0)] = _fake_entry((4, 4))
    with pytest.raises(DataError):
        cache[(1, 1)] = _fake_entry((5, 4))


def test_cached_dataset_reads_each_file_once(raw_ds):
    class Counting:
        def __init__(self, base):
            self._base = base
            self.calls = 0
            self.cameras, self.manifest = base.cameras, base.manifest
            self.N, self.W, self.H, self.T = base.N, base.W, base.H, base.T
            self.target_cam = base.target_cam

        def input_ids(self):
            return self._base.input_ids()

        def frame(self, cam_id, t):
            self.calls += 1
            return self._base.frame(cam_id, t)

        def novel(self, t):
            self.calls += 1
            return self._base.novel(t)

        def pdepth(self, cam_id, t):
            self.calls += 1
            return self._base.pdepth(cam_id, t)

    counting = Counting(raw_ds)
    data = CachedDataset(counting)
    data.frame(1, 0)
    data.frame(1, 0)
    data.novel(2)
    data.novel(2)
    data.pdepth(1, 0)
    data.pdepth(1, 0)
    assert counting.calls == 3


# ---------------------------------------------------------------------
# streaming


def test_stream_step_rejects_frames_outside_the_range(ds, params):
    cache = FeatureCache(CFG)
    with pytest.raises(DataError):
        stream_step(ds.T, ds, params, CFG, cache)
    with pytest.raises(DataError):
        stream_step(-1, ds, params, CFG, cache)


def test_run_stream_frame_subset(ds, params):
    stats, times, cache = run_stream(ds, params, CFG, frames=[0, 1, 2])
    assert len(stats) == len(times) == 3
    assert all(dt > 0 for dt in times)
    assert cache.timesteps() == [0, 1, 2]


def test_cache_leaves_outputs_unchanged(ds, params):
    hot, cold = {}, {}
    run_stream(ds, params, CFG, collect=lambda t, r: hot.__setitem__(t, r.f_hat.data))
    run_stream(ds, params, CFG, use_cache=False,
               collect=lambda t, r: cold.__setitem__(t, r.f_hat.data))
    worst = max(float(np.abs(hot[t] - cold[t]).max()) for t in hot)
    assert worst <= 1e-6


def test_cache_encodes_only_new_streams(ds, params):
    _, _, hot = run_stream(ds, params, CFG)
    _, _, cold = run_stream(ds, params, CFG, use_cache=False)
    streams = len(ds.input_ids()) + 1  # input cameras plus the rendered view
    assert hot.encode_count == streams * ds.T
    want_cold = streams * sum(
        len(select_context_frames(t, CFG.n_c, CFG.n_w, CFG.k_w)) for t in range(ds.T)
    )
    assert cold.encode_count == want_cold
    assert hot.encode_count < 0.5 * cold.encode_count


# ---------------------------------------------------------------------
# evaluation and the bench table


def test_evaluate_rows_and_summary(ds, params):
    rows, summary = evaluate(ds, params, CFG)
    assert [r["frame"] for r in rows] == list(range(ds.T))
    for r in rows:
        assert set(r) == {"frame", "psnr_full", "ssim_full", "psnr_in", "ssim_in"}
        assert r["ssim_full"] <= 1.0
    finite = [r["psnr_full"] for r in rows if math.isfinite(r["psnr_full"])]
    assert summary["psnr_full"] == pytest.approx(float(np.mean(finite)))
    assert summary["fps"] > 0
    assert summary["macs"] >= summary["macs_post"] > 0


def test_bench_dense_row_matches_plain_eval(ds, params):
    table = bench(ds, params, CFG, [1.0], repeats=1)
    _, summary = evaluate(ds, params, CFG)  # default retention, dense path
    for key in ("psnr_full", "ssim_full", "psnr_in", "ssim_in", "macs"):
        assert table[0][key] == summary[key]


def test_bench_sparsify_cuts_attention_work(ds, params):
    table = bench(ds, params, CFG, [1.0, 0.25], repeats=1)
    assert [r["rho"] for r in table] == [1.0, 0.25]
    dense, sparse = table
    assert sparse["macs_post"] < dense["macs_post"]
    assert sparse["macs"] < dense["macs"]
    assert dense["fps"] > 0 and sparse["fps"] > 0


def test_eval_csv_uses_the_inf_sentinel(tmp_path):
    rows = [{"frame": 0, "psnr_full": math.inf, "ssim_full": 1.0,
             "psnr_in": math.inf, "ssim_in": 1.0}]
    path = tmp_path / "eval.csv"
    write_eval_csv(path, rows)
    lines = path.read_text().splitlines()
    assert lines[0] == "frame,psnr_full,ssim_full,psnr_in,ssim_in"
    assert lines[1] == "0,inf,1.0,inf,1.0"


def test_bench_csv_schema(tmp_path):
    table = [{"rho": 0.5, "fps": 12.5, "macs": 100, "macs_post": 60,
              "psnr_full": 20.0, "ssim_full": 0.9, "psnr_in": 18.0, "ssim_in": 0.8}]
    path = tmp_path / "bench.csv"
    write_bench_csv(path, table)
    lines = path.read_text().splitlines()
    assert lines[0] == "rho,fps,macs,psnr_full,ssim_full,psnr_in,ssim_in"
    assert lines[1] == "0.5,12.5,100,20.0,0.9,18.0,0.8"
