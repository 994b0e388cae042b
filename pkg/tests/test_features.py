"""Encoder, patch grid, routing flags, coordinates, and context assembly."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mvinpaint.config import RunConfig, apply_ablation
from mvinpaint.data import Dataset, dataset_write
from mvinpaint.features import (
    FeatureMap,
    build_context,
    encode,
    extract_patches,
    grid_starts,
    init_encoder_params,
    patch_coords,
)
from mvinpaint.rig import FrameBundle, SceneSpec, build_cameras
from mvinpaint.tensor import Tensor

CFG = RunConfig()
SMALL_CFG = RunConfig(channels=8)


def _flat_frame(rgb, t=0, cam_id=1):
    """Frame with full-coverage masks so no patch gets pruned."""
    H, W = rgb.shape[:2]
    ones = np.ones((H, W), dtype=np.float32)
    return FrameBundle(rgb=rgb, fg_mask=ones, depth=ones, error_mask=np.zeros((H, W), np.float32),
                       timestep=t, camera_id=cam_id)


def _params(cfg, seed=0):
    return init_encoder_params(cfg, np.random.default_rng(seed))


# ---------------------------------------------------------------------
# encoder


def test_encode_output_resolution():
    frame = _flat_frame(np.zeros((64, 64, 3), np.float32))
    fm = encode(frame, None, _params(CFG), CFG)
    assert fm.feat.shape == (32, 16, 16)
    assert fm.image_hw == (64, 64)


def test_encode_zero_input_is_spatially_constant():
    H = W = 32
    zero = FrameBundle(rgb=np.zeros((H, W, 3), np.float32), fg_mask=np.zeros((H, W), np.float32),
                       depth=np.zeros((H, W), np.float32), error_mask=np.zeros((H, W), np.float32),
                       timestep=0, camera_id=1)
    fm = encode(zero, None, _params(CFG), CFG)
    per_cell = fm.feat.data.reshape(32, -1)
    assert np.all(per_cell == per_cell[:, :1])


def test_encode_outside_receptive_field_is_invisible():
    rng = np.random.default_rng(3)
    base = rng.random((32, 32, 3)).astype(np.float32)
    far = base.copy()
    far[20:, 20:] += 0.5
    params = _params(CFG)
    a = encode(_flat_frame(base), None, params, CFG)
    b = encode(_flat_frame(far), None, params, CFG)
    assert np.array_equal(a.feat.data[:, 0, 0], b.feat.data[:, 0, 0])
    assert not np.array_equal(a.feat.data, b.feat.data)


def test_encode_translation_consistency():
    rng = np.random.default_rng(4)
    canvas = rng.random((48, 48, 3)).astype(np.float32)
    params = _params(CFG)
    a = encode(_flat_frame(canvas[:40, :40]), None, params, CFG)
    b = encode(_flat_frame(canvas[4:44, :40]), None, params, CFG)
    # shifting the input by s_f pixels shifts the features by one cell
    np.testing.assert_allclose(
        a.feat.data[:, 4:-3, 3:-3], b.feat.data[:, 3:-4, 3:-3], atol=1e-5
    )


def test_encode_mask_pooling_is_any_semantics():
    H = W = 32
    fg = np.zeros((H, W), np.float32)
    fg[5, 9] = 1.0
    err = np.zeros((H, W), np.float32)
    err[5, 9] = 1.0
    depth = np.zeros((H, W), np.float32)
    depth[5, 9] = 1.0
    frame = FrameBundle(rgb=np.zeros((H, W, 3), np.float32), fg_mask=fg, depth=depth,
                        error_mask=err, timestep=0, camera_id=1)
    fm = encode(frame, None, _params(CFG), CFG)
    assert fm.fg[1, 2] == 1.0 and fm.fg.sum() == 1.0
    assert fm.err[1, 2] == 1.0 and fm.err.sum() == 1.0


def test_encode_pads_odd_resolutions():
    frame = _flat_frame(np.zeros((30, 30, 3), np.float32))
    fm = encode(frame, None, _params(CFG), CFG)
    assert fm.feat.shape == (32, 8, 8)
    assert fm.image_hw == (30, 30)


def test_encode_zero_error_flag_blanks_the_channel():
    rng = np.random.default_rng(5)
    rgb = rng.random((32, 32, 3)).astype(np.float32)
    ones = np.ones((32, 32), np.float32)
    holed = FrameBundle(rgb=rgb, fg_mask=ones, depth=ones, error_mask=ones, timestep=0, camera_id=1)
    params = _params(CFG)
    a = encode(holed, None, params, CFG, zero_error=True)
    clean = FrameBundle(rgb=rgb, fg_mask=ones, depth=ones, error_mask=np.zeros_like(ones),
                        timestep=0, camera_id=1)
    b = encode(clean, None, params, CFG)
    assert np.array_equal(a.feat.data, b.feat.data)
    assert a.err.sum() == 0


# ---------------------------------------------------------------------
# patch grid


def test_grid_starts_clamps_last():
    assert grid_starts(16, 7, 4) == [0, 4, 8, 9]
    assert grid_starts(7, 7, 4) == [0]
    assert grid_starts(8, 7, 4) == [0, 1]


@settings(max_examples=100, deadline=None)
@given(extent=st.integers(7, 60))
def test_grid_starts_cover_every_cell(extent):
    starts = grid_starts(extent, 7, 4)
    covered = np.zeros(extent, dtype=bool)
    for s in starts:
        covered[s:s + 7] = True
    assert covered.all()
    assert starts == sorted(set(starts))


def _fm(feat, fg=None, err=None, cam_id=1, t=0):
    C, h, w = feat.shape
    return FeatureMap(
        feat=Tensor(feat.astype(np.float32)),
        camera_id=cam_id,
        timestep=t,
        fg=np.ones((h, w), np.float32) if fg is None else fg,
        err=np.zeros((h, w), np.float32) if err is None else err,
        image_hw=(h * 4, w * 4),
    )


def test_extract_full_grid_before_pruning():
    rng = np.random.default_rng(0)
    ps = extract_patches(_fm(rng.random((8, 16, 16))), SMALL_CFG)
    assert len(ps) == 16
    assert sorted(set(ps.rows.tolist())) == [0, 4, 8, 9]
    assert sorted(set(ps.cols.tolist())) == [0, 4, 8, 9]
    assert ps.tokens.shape == (16, 7 * 7 * 8)


def test_extract_background_only_is_empty():
    feat = np.random.default_rng(1).random((8, 16, 16))
    ps = extract_patches(_fm(feat, fg=np.zeros((16, 16), np.float32)), SMALL_CFG)
    assert len(ps) == 0 and ps.tokens.shape == (0, 392)


def test_extract_single_error_cell_marks_one_patch():
    err = np.zeros((16, 16), np.float32)
    err[0, 0] = 1.0
    ps = extract_patches(_fm(np.random.default_rng(2).random((8, 16, 16)), err=err), SMALL_CFG)
    assert len(ps) == 16
    assert ps.inpaint.sum() == 1
    hit = np.nonzero(ps.inpaint)[0][0]
    assert (ps.rows[hit], ps.cols[hit]) == (0, 0)


def test_extract_tokens_match_manual_slices():
    rng = np.random.default_rng(3)
    feat = rng.random((8, 16, 16)).astype(np.float32)
    ps = extract_patches(_fm(feat), SMALL_CFG)
    for i in range(len(ps)):
        r, c = ps.rows[i], ps.cols[i]
        manual = feat[:, r:r + 7, c:c + 7].reshape(-1)
        assert np.array_equal(ps.tokens.data[i], manual)


def test_extract_small_map_pads_one_token():
    rng = np.random.default_rng(4)
    feat = rng.random((8, 5, 6)).astype(np.float32)
    ps = extract_patches(_fm(feat), SMALL_CFG)
    assert len(ps) == 1 and ps.padded
    manual = np.zeros((8, 7, 7), dtype=np.float32)
    manual[:, :5, :6] = feat
    assert np.array_equal(ps.tokens.data[0], manual.reshape(-1))


def test_extract_routing_partition():
    rng = np.random.default_rng(5)
    err = (rng.random((16, 16)) < 0.1).astype(np.float32)
    fg = np.ones((16, 16), np.float32)
    ps = extract_patches(_fm(rng.random((8, 16, 16)), fg=fg, err=err), SMALL_CFG)
    win = np.lib.stride_tricks.sliding_window_view(err, (7, 7))
    for i in range(len(ps)):
        touches = win[ps.rows[i], ps.cols[i]].max() > 0
        assert ps.inpaint[i] == touches


def test_subset_is_differentiable():
    rng = np.random.default_rng(6)
    feat = Tensor(rng.random((8, 16, 16)).astype(np.float32), requires_grad=True)
    fm = FeatureMap(feat=feat, camera_id=1, timestep=0, fg=np.ones((16, 16), np.float32),
                    err=np.zeros((16, 16), np.float32), image_hw=(64, 64))
    ps = extract_patches(fm, SMALL_CFG)
    sub = ps.subset(np.arange(len(ps)) % 2 == 0)
    sub.tokens.sum().backward()
    assert feat.grad is not None and np.abs(feat.grad).sum() > 0


# ---------------------------------------------------------------------
# coordinates


def test_patch_coords_target_view_center():
    cams = build_cameras(SceneSpec())
    target = cams[4]
    ps = extract_patches(_fm(np.random.default_rng(0).random((8, 16, 16)), cam_id=5, t=3), SMALL_CFG)
    patch_coords(ps, target, target, None, 3, SMALL_CFG)
    mid = [i for i in range(len(ps)) if ps.rows[i] == 4 and ps.cols[i] == 4][0]
    assert abs(ps.coords[mid, 0] - 0.5) <= 0.05
    assert abs(ps.coords[mid, 1] - 0.5) <= 0.05
    assert ps.coords[mid, 2] == 0.0
    assert ps.coords[:, 0].min() >= 0 and ps.coords[:, 0].max() <= 1
    assert ps.reproj_valid.all()


def test_patch_coords_temporal_normalization():
    cams = build_cameras(SceneSpec())
    ps = extract_patches(_fm(np.random.default_rng(1).random((8, 16, 16)), cam_id=5, t=10), SMALL_CFG)
    patch_coords(ps, cams[4], cams[4], None, 30, SMALL_CFG)  # tau = t - 20, window 30
    np.testing.assert_allclose(ps.coords[:, 2], -20.0 / 30.0, atol=1e-6)


def test_patch_coords_cross_camera_uses_reprojection():
    from mvinpaint.cameras import reproject_coord
    from mvinpaint.rig import proxy_at, render_pseudo_depth

    spec = SceneSpec()
    cams = build_cameras(spec)
    src, target = cams[0], cams[4]
    pd = render_pseudo_depth(proxy_at(spec, 0), src)
    ps = extract_patches(_fm(np.random.default_rng(2).random((8, 16, 16)), cam_id=1, t=0), SMALL_CFG)
    native_u = (ps.cols + 3.5) * 4 / 64.0
    native_v = (ps.rows + 3.5) * 4 / 64.0
    patch_coords(ps, src, target, pd, 0, SMALL_CFG)
    assert np.isfinite(ps.coords).all()
    for i in range(len(ps)):
        want, ok = reproject_coord(np.array([native_u[i], native_v[i]]), src, target, pd, footprint=28)
        assert ps.reproj_valid[i] == ok
        np.testing.assert_allclose(ps.coords[i, :2], want.astype(np.float32), rtol=1e-6)
    assert ps.reproj_valid.any()


# ---------------------------------------------------------------------
# context assembly


@pytest.fixture(scope="module")
def tiny_ds(tmp_path_factory):
    out = tmp_path_factory.mktemp("ds")
    spec = SceneSpec(width=32, height=32, n_frames=4)
    dataset_write(spec, out)
    return Dataset(out)


TINY = RunConfig(width=32, height=32, n_frames=4)


def test_build_context_routes_by_error_footprint(tiny_ds):
    params = _params(TINY)
    p, r = build_context(3, tiny_ds, params, TINY)
    assert len(p) and p.inpaint.all()
    assert (p.camera_ids == 5).all() and (p.timesteps == 3).all()
    assert set(r.timesteps.tolist()) == {0, 1, 2, 3}
    assert set(r.camera_ids.tolist()) <= {1, 2, 3, 4, 5}
    # input-view streams never carry inpaint flags; their error channel is zero
    assert not r.inpaint[r.camera_ids != 5].any()


def test_build_context_order_is_camera_then_time(tiny_ds):
    p, r = build_context(3, tiny_ds, _params(TINY), TINY)
    key = np.stack([r.camera_ids, r.timesteps, r.rows, r.cols])
    order = np.lexsort(key[::-1])
    assert np.array_equal(order, np.arange(len(r)))


def test_build_context_no_temporal_context(tiny_ds):
    cfg = apply_ablation(TINY, "no-temporal")
    p, r = build_context(3, tiny_ds, _params(TINY), cfg)
    assert set(r.timesteps.tolist()) == {3}


def test_build_context_single_cam(tiny_ds):
    cfg = apply_ablation(TINY, "single-cam")
    p, r = build_context(3, tiny_ds, _params(TINY), cfg)
    assert len(p)
    assert set(r.camera_ids.tolist()) <= {5}


def test_build_context_cache_transparency(tiny_ds):
    params = _params(TINY)
    p1, r1 = build_context(3, tiny_ds, params, TINY)
    cache = {}
    build_context(2, tiny_ds, params, TINY, cache=cache)
    p2, r2 = build_context(3, tiny_ds, params, TINY, cache=cache)
    assert np.array_equal(p1.tokens.data, p2.tokens.data)
    assert np.array_equal(r1.tokens.data, r2.tokens.data)
    assert np.array_equal(r1.coords, r2.coords)
    assert np.array_equal(r1.camera_ids, r2.camera_ids)


def test_build_context_no_masks_keeps_routing(tiny_ds):
    params = _params(TINY)
    p1, r1 = build_context(3, tiny_ds, params, TINY)
    cfg = apply_ablation(TINY, "no-masks")
    p2, r2 = build_context(3, tiny_ds, params, cfg)
    assert np.array_equal(p1.rows, p2.rows) and np.array_equal(p1.cols, p2.cols)
    assert np.array_equal(r1.rows, r2.rows)
    assert not np.array_equal(p1.tokens.data, p2.tokens.data)


def test_build_context_gradients_reach_encoder(tiny_ds):
    params = _params(TINY)
    p, r = build_context(1, tiny_ds, params, TINY)
    (p.tokens.sum() + r.tokens.sum()).backward()
    for name in ("enc.c0.w", "enc.c3.b"):
        assert params[name].grad is not None
        assert np.isfinite(params[name].grad).all()
