"""End-to-end command-line workflows on a small scene."""

import numpy as np
import pytest

from mvinpaint.cli import main
from mvinpaint.config import load_config
from mvinpaint.data import Dataset
from mvinpaint.model import init_generator, load_model

CFG_TEXT = "width = 32\nheight = 32\nn_frames = 6\nval_frames = 2\nlog_every = 50\n"


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "cfg.txt").write_text(CFG_TEXT)
    cfg = str(root / "cfg.txt")
    assert main(["generate", "--config", cfg, "--out", str(root / "ds")]) == 0
    assert main(["train", "--config", cfg, "--dataset", str(root / "ds"),
                 "--out", str(root / "run"), "--steps", "3"]) == 0
    return root


def test_generate_writes_a_loadable_dataset(work):
    ds = Dataset(work / "ds")
    assert (ds.W, ds.H, ds.T, ds.N) == (32, 32, 6, 5)
    assert (work / "ds" / "config.txt").read_text().startswith("# sha256:")


def test_train_writes_checkpoint_and_metrics(work):
    params, cfg, extra = load_model(work / "run" / "ckpt")
    assert extra["steps_run"] == "3"
    assert cfg.width == 32 and cfg.n_frames == 6
    lines = (work / "run" / "train_metrics.csv").read_text().splitlines()
    assert lines[0] == "step,L_in,L_out,d_loss,g_loss,psnr_val"
    assert len(lines) == 4


def test_train_zero_steps_writes_initialized_weights(work, tmp_path):
    cfg_path = work / "cfg.txt"
    assert main(["train", "--config", str(cfg_path), "--dataset", str(work / "ds"),
                 "--out", str(tmp_path / "zero"), "--steps", "0"]) == 0
    params, cfg, extra = load_model(tmp_path / "zero" / "ckpt")
    assert extra["steps_run"] == "0"
    fresh = init_generator(load_config(cfg_path, {"steps": 0}), cfg.seed)
    for name in fresh:
        np.testing.assert_array_equal(params[name].data, fresh[name].data)


def test_train_reruns_are_byte_identical(work, tmp_path):
    cfg = str(work / "cfg.txt")
    for tag in ("a", "b"):
        assert main(["train", "--config", cfg, "--dataset", str(work / "ds"),
                     "--out", str(tmp_path / tag), "--steps", "2", "--seed", "9"]) == 0
    files_a = sorted((tmp_path / "a" / "ckpt").iterdir())
    files_b = sorted((tmp_path / "b" / "ckpt").iterdir())
    assert [f.name for f in files_a] == [f.name for f in files_b]
    for fa, fb in zip(files_a, files_b):
        assert fa.read_bytes() == fb.read_bytes()
    csv_a = (tmp_path / "a" / "train_metrics.csv").read_bytes()
    assert csv_a == (tmp_path / "b" / "train_metrics.csv").read_bytes()


def test_infer_writes_frames_and_cache_is_transparent(work, tmp_path):
    base = ["--checkpoint", str(work / "run" / "ckpt"), "--dataset", str(work / "ds")]
    assert main(["infer", *base, "--out", str(tmp_path / "hot")]) == 0
    assert main(["infer", *base, "--out", str(tmp_path / "cold"), "--no-cache"]) == 0
    hot = sorted((tmp_path / "hot" / "frames").iterdir())
    cold = sorted((tmp_path / "cold" / "frames").iterdir())
    assert len(hot) == 6 and [f.name for f in hot] == [f.name for f in cold]
    header, _, pixels = hot[0].read_bytes().partition(b"\n")
    assert header == b"P6 32 32 255" and len(pixels) == 32 * 32 * 3
    for fh, fc in zip(hot, cold):
        a = np.frombuffer(fh.read_bytes().partition(b"\n")[2], np.uint8).astype(np.int16)
        b = np.frombuffer(fc.read_bytes().partition(b"\n")[2], np.uint8).astype(np.int16)
        # float agreement is <= 1e-6, so quantized bytes differ by at most one step
        assert np.abs(a - b).max() <= 1


def test_eval_rerun_is_byte_identical(work, tmp_path):
    base = ["eval", "--checkpoint", str(work / "run" / "ckpt"),
            "--dataset", str(work / "ds"), "--deterministic"]
    assert main([*base, "--out", str(tmp_path / "e1")]) == 0
    assert main([*base, "--out", str(tmp_path / "e2")]) == 0
    assert (tmp_path / "e1" / "eval.csv").read_bytes() == (tmp_path / "e2" / "eval.csv").read_bytes()
    lines = (tmp_path / "e1" / "eval.csv").read_text().splitlines()
    assert lines[0] == "frame,psnr_full,ssim_full,psnr_in,ssim_in"
    assert len(lines) == 7


def test_bench_default_sweep_has_four_rows(work, tmp_path):
    assert main(["bench", "--checkpoint", str(work / "run" / "ckpt"),
                 "--dataset", str(work / "ds"), "--out", str(tmp_path / "bn")]) == 0
    lines = (tmp_path / "bn" / "bench.csv").read_text().splitlines()
    assert lines[0] == "rho,fps,macs,psnr_full,ssim_full,psnr_in,ssim_in"
    assert [row.split(",")[0] for row in lines[1:]] == ["1.0", "0.5", "0.25", "0.1"]


def test_exit_code_on_unknown_config_key(tmp_path):
    bad = tmp_path / "bad.txt"
    bad.write_text("bogus = 1\n")
    assert main(["generate", "--config", str(bad), "--out", str(tmp_path / "x")]) == 2


def test_exit_code_on_missing_dataset(work, tmp_path):
    assert main(["eval", "--checkpoint", str(work / "run" / "ckpt"),
                 "--dataset", str(tmp_path / "nowhere"), "--out", str(tmp_path / "x")]) == 3


def test_exit_code_on_shape_handshake(work, tmp_path):
    small = tmp_path / "small.txt"
    small.write_text("width = 16\nheight = 16\n")
    assert main(["train", "--config", str(small), "--dataset", str(work / "ds"),
                 "--out", str(tmp_path / "x"), "--steps", "0"]) == 3


def test_exit_code_on_pinned_architecture_conflict(work, tmp_path):
    conflicting = tmp_path / "arch.txt"
    conflicting.write_text("model_dim = 96\n")
    assert main(["eval", "--checkpoint", str(work / "run" / "ckpt"),
                 "--dataset", str(work / "ds"), "--config", str(conflicting),
                 "--out", str(tmp_path / "x")]) == 2


def test_bad_flag_value_exits_two(work, tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["train", "--config", str(work / "cfg.txt"), "--dataset", str(work / "ds"),
              "--out", str(tmp_path / "x"), "--ablate", "everything"])
    assert exc.value.code == 2
