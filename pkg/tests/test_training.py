"""Loss terms, the adversarial objective, and short end-to-end training runs."""

import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mvinpaint.config import RunConfig
from mvinpaint.data import Dataset, dataset_write
from mvinpaint.model import trainable
from mvinpaint.tensor import Adam, Tensor
from mvinpaint.training import (
    disc_loss,
    discriminator,
    gen_loss,
    init_discriminator,
    loss_in,
    loss_out,
    total_loss,
    train,
    validation_frames,
    write_metrics_csv,
)

TRAIN_CFG = RunConfig(width=32, height=32, n_frames=6, steps=30, lr=2e-3,
                      lambda_adv=0.0, val_frames=2, log_every=1000, seed=3)


@pytest.fixture(scope="module")
def ds(tmp_path_factory):
    out = tmp_path_factory.mktemp("train_ds")
    dataset_write(TRAIN_CFG.scene_spec(), out)
    return Dataset(out)


# ---------------------------------------------------------------------
# reconstruction terms


def test_loss_in_uniform_gap():
    f = Tensor(np.full((3, 8, 8), 0.7, np.float32))
    target = np.full((3, 8, 8), 0.4, np.float32)
    err = np.ones((8, 8), np.float32)
    assert float(loss_in(f, target, err).data) == pytest.approx(0.9, abs=1e-6)


def test_loss_in_single_pixel_mask():
    rng = np.random.default_rng(0)
    f = Tensor(rng.random((3, 8, 8)).astype(np.float32))
    target = rng.random((3, 8, 8)).astype(np.float32)
    err = np.zeros((8, 8), np.float32)
    err[2, 3] = 1.0
    want = np.abs(f.data[:, 2, 3] - target[:, 2, 3]).sum()
    assert float(loss_in(f, target, err).data) == pytest.approx(want, rel=1e-6)


def test_loss_in_empty_mask_is_zero():
    zeros = np.zeros((3, 4, 4), np.float32)
    got = loss_in(Tensor(np.ones_like(zeros)), zeros, np.zeros((4, 4), np.float32))
    assert float(got.data) == 0.0


def test_losses_partition_the_total_error():
    rng = np.random.default_rng(1)
    f = Tensor(rng.random((3, 8, 8)).astype(np.float32))
    target = rng.random((3, 8, 8)).astype(np.float32)
    err = (rng.random((8, 8)) < 0.3).astype(np.float32)
    li = float(loss_in(f, target, err).data)
    lo = float(loss_out(f, target, err).data)
    total = np.abs(f.data.astype(np.float64) - target).sum()
    assert li * err.sum() + lo * (1 - err).sum() == pytest.approx(total, rel=1e-5)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_loss_in_ignores_pixels_outside_mask(seed):
    rng = np.random.default_rng(seed)
    f = rng.random((3, 6, 6)).astype(np.float32)
    target = rng.random((3, 6, 6)).astype(np.float32)
    err = (rng.random((6, 6)) < 0.4).astype(np.float32)
    base = float(loss_in(Tensor(f), target, err).data)
    outside = err == 0
    noisy = f.copy()
    noisy[:, outside] = rng.random((3, int(outside.sum()))).astype(np.float32)
    assert float(loss_in(Tensor(noisy), target, err).data) == base


def test_total_loss_weighting():
    cfg = RunConfig(lambda_img=2.0, lambda_adv=0.5)
    got = total_loss(Tensor(np.float32(0.3)), Tensor(np.float32(0.21)),
                     Tensor(np.float32(0.1)), cfg)
    assert float(got.data) == pytest.approx(2.0 * 0.51 + 0.5 * 0.1, rel=1e-6)


def test_total_loss_drops_adversary_at_zero_weight():
    cfg = RunConfig(lambda_adv=0.0)
    got = total_loss(Tensor(np.float32(0.3)), Tensor(np.float32(0.2)), None, cfg)
    assert float(got.data) == pytest.approx(0.5, rel=1e-6)


# ---------------------------------------------------------------------
# adversary


def test_discriminator_outputs_probability():
    disc = init_discriminator(RunConfig(), 0)
    p = discriminator(np.random.default_rng(2).random((3, 32, 32)).astype(np.float32), disc)
    assert p.shape == ()
    assert 0.0 < float(p.data) < 1.0


def test_objectives_decompose_into_log_terms():
    disc = init_discriminator(RunConfig(), 1)
    rng = np.random.default_rng(3)
    real = rng.random((3, 32, 32)).astype(np.float32)
    fake = rng.random((3, 32, 32)).astype(np.float32)
    d_r = float(discriminator(real, disc).data)
    d_f = float(discriminator(fake, disc).data)
    want_d = -(math.log(d_r) + math.log(1.0 - d_f))
    assert float(disc_loss(disc, real, fake).data) == pytest.approx(want_d, rel=1e-5)
    assert float(gen_loss(disc, Tensor(fake)).data) == pytest.approx(-math.log(d_f), rel=1e-5)


def test_discriminator_learns_to_separate():
    disc = init_discriminator(RunConfig(), 0)
    opt = Adam(trainable(disc), lr=1e-3)
    rng = np.random.default_rng(4)
    for _ in range(40):
        real = (rng.random((3, 32, 32)) * 0.2).astype(np.float32)  # dark is real
        fake = (0.8 + rng.random((3, 32, 32)) * 0.2).astype(np.float32)
        loss = disc_loss(disc, real, fake)
        opt.zero_grad()
        loss.backward()
        opt.step()
    d_real = float(discriminator(np.full((3, 32, 32), 0.1, np.float32), disc).data)
    d_fake = float(discriminator(np.full((3, 32, 32), 0.9, np.float32), disc).data)
    assert d_real > d_fake


# ---------------------------------------------------------------------
# train loop


def test_short_run_reduces_reconstruction_loss(ds):
    params, disc, rows = train(ds, TRAIN_CFG)
    assert len(rows) == TRAIN_CFG.steps
    first = np.mean([r["l_in"] + r["l_out"] for r in rows[:5]])
    last = np.mean([r["l_in"] + r["l_out"] for r in rows[-5:]])
    assert last < first
    assert math.isfinite(rows[-1]["psnr_val"])
    assert all(math.isnan(r["psnr_val"]) for r in rows[:-1])


def test_training_is_deterministic(ds):
    cfg = dataclasses.replace(TRAIN_CFG, steps=4)
    a = train(ds, cfg)[2]
    b = train(ds, cfg)[2]
    assert [r["total"] for r in a] == [r["total"] for r in b]
    assert [r["t"] for r in a] == [r["t"] for r in b]


def test_adversarial_terms_stay_finite(ds):
    cfg = dataclasses.replace(TRAIN_CFG, steps=3, lambda_adv=0.01)
    _, _, rows = train(ds, cfg)
    for r in rows:
        assert math.isfinite(r["d_loss"]) and r["d_loss"] != 0.0
        assert math.isfinite(r["g_loss"]) and r["g_loss"] != 0.0


def test_training_frames_avoid_the_validation_tail(ds):
    seen = []
    cfg = dataclasses.replace(TRAIN_CFG, steps=12)
    train(ds, cfg, on_step=lambda rec: seen.append(rec["t"]))
    held_out = set(validation_frames(ds, cfg))
    assert held_out == {4, 5}
    assert not held_out & set(seen)


def test_metrics_csv_schema_and_sentinels(tmp_path):
    rows = [{"step": 0, "l_in": 0.5, "l_out": 0.25, "d_loss": 0.0, "g_loss": 0.0,
             "psnr_val": math.inf}]
    path = tmp_path / "train.csv"
    write_metrics_csv(path, rows)
    lines = path.read_text().splitlines()
    assert lines[0] == "step,L_in,L_out,d_loss,g_loss,psnr_val"
    assert lines[1] == "0,0.5,0.25,0.0,0.0,inf"
