"""Frame encoding and patch tokenization.

A small strided CNN turns each frame (plus its masks and pseudo-depth) into a
feature map at 1/s_f resolution. Feature maps are cut into overlapping P×P
patches on a clamped grid; background-only patches are dropped, patches whose
footprint touches the error mask become the inpaint set, the rest become
context. Every token carries a spatio-temporal coordinate in the target
view frame.
"""

from dataclasses import dataclass, field

import numpy as np

from .attention import embed_in
from .cameras import CameraParams, reproject_coords
from .errors import DataError, DimensionError
from .rig import FrameBundle, select_context_frames
from .tensor import Tensor, concat, conv2d, pad_reflect, relu, scatter_flat, take_flat

# ---------------------------------------------------------------------
# encoder


def init_encoder_params(cfg, rng) -> dict:
    """He-initialized weights for the four-conv encoder."""
    c_in, c_mid, c_out = cfg.encoder_in_channels(), cfg.channels // 2, cfg.channels
    plan = [(c_mid, c_in), (c_mid, c_mid), (c_out, c_mid), (c_out, c_out)]
    params = {}
    for i, (co, ci) in enumerate(plan):
        w = rng.normal(0.0, np.sqrt(2.0 / (ci * 9)), (co, ci, 3, 3))
        params[f"enc.c{i}.w"] = Tensor(w.astype(np.float32), requires_grad=True)
        params[f"enc.c{i}.b"] = Tensor(np.zeros(co, dtype=np.float32), requires_grad=True)
    return params


@dataclass(eq=False)
class FeatureMap:
    """Encoded frame at feature resolution, with downsampled masks."""

    feat: Tensor  # [C, h, w]
    camera_id: int
    timestep: int
    fg: np.ndarray  # [h, w] float32, max-pooled foreground mask
    err: np.ndarray  # [h, w] float32, max-pooled error mask
    image_hw: tuple  # original (H, W) before any pad

    @property
    def grid_hw(self):
        return self.feat.shape[1], self.feat.shape[2]


def encoder_input(frame: FrameBundle, pseudo_depth, cfg) -> np.ndarray:
    """Stack the encoder channels: rgb, fg mask, error mask, pseudo-depth.

    Mask channels are zeroed under the no-masks ablation; the depth channel is
    scaled into [0, 1] per frame so it matches the color range.
    """
    fg, err = frame.fg_mask, frame.error_mask
    if not cfg.use_masks:
        fg = np.zeros_like(fg)
        err = np.zeros_like(err)
    layers = [frame.rgb[..., 0], frame.rgb[..., 1], frame.rgb[..., 2], fg, err]
    if cfg.use_pseudo_depth:
        pd = np.zeros_like(fg) if pseudo_depth is None else np.asarray(pseudo_depth, dtype=np.float32)
        if pd.shape != fg.shape:
            raise DimensionError(f"pseudo-depth shape {pd.shape} does not match frame {fg.shape}")
        layers.append(pd / max(float(pd.max()), 1.0))
    return np.stack(layers).astype(np.float32)


def _pad_to_multiple(x, s):
    """Reflect-pad the trailing axes of [C,H,W] up to multiples of s."""
    H, W = x.shape[-2:]
    ph, pw = (-H) % s, (-W) % s
    if ph == 0 and pw == 0:
        return x
    return np.pad(x, ((0, 0), (0, ph), (0, pw)), mode="reflect")


def _pool_mask(m, s):
    h, w = m.shape[0] // s, m.shape[1] // s
    return m.reshape(h, s, w, s).max(axis=(1, 3))


def _encoder_stack(x: Tensor, params) -> Tensor:
    """Two stages of conv-relu, conv-relu(stride 2); accepts a batch axis."""
    for i, stride in enumerate((1, 2, 1, 2)):
        x = relu(conv2d(pad_reflect(x, 1), params[f"enc.c{i}.w"], params[f"enc.c{i}.b"], stride=stride))
    return x


def _encoder_io(frame: FrameBundle, pseudo_depth, cfg, zero_error):
    """Padded channel stack plus the pooled masks for one frame."""
    if zero_error:
        frame = FrameBundle(
            rgb=frame.rgb,
            fg_mask=frame.fg_mask,
            depth=frame.depth,
            error_mask=np.zeros_like(frame.error_mask),
            timestep=frame.timestep,
            camera_id=frame.camera_id,
        )
    x = _pad_to_multiple(encoder_input(frame, pseudo_depth, cfg), cfg.s_f)
    s = cfg.s_f
    fg_pad = np.zeros(x.shape[-2:], dtype=np.float32)
    err_pad = np.zeros_like(fg_pad)
    H, W = frame.fg_mask.shape
    fg_pad[:H, :W] = frame.fg_mask
    if not zero_error:
        err_pad[:H, :W] = frame.error_mask
    return x, _pool_mask(fg_pad, s), _pool_mask(err_pad, s), (H, W)


def encode(frame: FrameBundle, pseudo_depth, params, cfg, *, zero_error=False) -> FeatureMap:
    """CNN forward pass for one frame.

    ``zero_error`` feeds an all-zero error channel, used for context frames
    where no inpainting is requested. Inputs not divisible by s_f are
    reflect-padded; the original size is recorded for cropping on decode.
    """
    x, fg, err, hw = _encoder_io(frame, pseudo_depth, cfg, zero_error)
    return FeatureMap(
        feat=_encoder_stack(Tensor(x), params),
        camera_id=frame.camera_id,
        timestep=frame.timestep,
        fg=fg,
        err=err,
        image_hw=hw,
    )


# ---------------------------------------------------------------------
# patch sets


@dataclass(eq=False)
class PatchSet:
    """Flattened feature patches with routing flags and coordinates."""

    tokens: Tensor  # [n, P*P*C]
    coords: np.ndarray  # [n, 3] float32: (u, v) in target frame, relative timestep
    inpaint: np.ndarray  # [n] bool: footprint touches the error mask
    reproj_valid: np.ndarray  # [n] bool
    rows: np.ndarray  # [n] int32 feature-grid row of the patch origin
    cols: np.ndarray  # [n] int32
    camera_ids: np.ndarray  # [n] int32
    timesteps: np.ndarray  # [n] int32
    grid_hw: tuple  # feature-map (h, w) the rows/cols index into
    image_hw: tuple  # original image (H, W)
    padded: bool = field(default=False)  # map smaller than P, token zero-padded
    emb: Tensor = field(default=None)  # [n, model_dim] token embeddings, when precomputed

    def __len__(self):
        return int(self.tokens.shape[0])

    def subset(self, keep) -> "PatchSet":
        """Differentiable row selection."""
        keep = np.asarray(keep)
        idx = np.nonzero(keep)[0] if keep.dtype == bool else keep

        def rows_of(t):
            d = t.shape[1]
            flat = (idx[:, None] * d + np.arange(d)[None, :]).astype(np.int64)
            return take_flat(t, flat, out_shape=(len(idx), d))

        return PatchSet(
            tokens=rows_of(self.tokens),
            coords=self.coords[idx],
            inpaint=self.inpaint[idx],
            reproj_valid=self.reproj_valid[idx],
            rows=self.rows[idx],
            cols=self.cols[idx],
            camera_ids=self.camera_ids[idx],
            timesteps=self.timesteps[idx],
            grid_hw=self.grid_hw,
            image_hw=self.image_hw,
            padded=self.padded,
            emb=None if self.emb is None else rows_of(self.emb),
        )


def concat_patchsets(sets) -> PatchSet:
    sets = [s for s in sets if len(s)]
    if not sets:
        raise DataError("cannot concatenate zero non-empty patch sets")
    gh = sets[0].grid_hw
    if any(s.grid_hw != gh for s in sets):
        raise DimensionError(f"patch sets span different feature grids: {[s.grid_hw for s in sets]}")
    embs = [s.emb for s in sets]
    return PatchSet(
        tokens=concat([s.tokens for s in sets], axis=0),
        emb=concat(embs, axis=0) if all(e is not None for e in embs) else None,
        coords=np.concatenate([s.coords for s in sets]),
        inpaint=np.concatenate([s.inpaint for s in sets]),
        reproj_valid=np.concatenate([s.reproj_valid for s in sets]),
        rows=np.concatenate([s.rows for s in sets]),
        cols=np.concatenate([s.cols for s in sets]),
        camera_ids=np.concatenate([s.camera_ids for s in sets]),
        timesteps=np.concatenate([s.timesteps for s in sets]),
        grid_hw=gh,
        image_hw=sets[0].image_hw,
        padded=any(s.padded for s in sets),
    )


def grid_starts(extent, patch, stride):
    """Patch origins along one axis; the last start is clamped to the border."""
    last = extent - patch
    starts = list(range(0, last + 1, stride))
    if starts[-1] != last:
        starts.append(last)
    return starts


def _window_any(mask, P):
    """For each valid (r, c) origin: does mask have any nonzero in the P×P window."""
    win = np.lib.stride_tricks.sliding_window_view(mask, (P, P))
    return win.max(axis=(2, 3)) > 0


def _empty_patchset(d, grid_hw, image_hw):
    z = np.zeros(0, dtype=np.int32)
    return PatchSet(
        tokens=Tensor(np.zeros((0, d), dtype=np.float32)),
        coords=np.zeros((0, 3), dtype=np.float32),
        inpaint=np.zeros(0, dtype=bool),
        reproj_valid=np.zeros(0, dtype=bool),
        rows=z,
        cols=z,
        camera_ids=z,
        timesteps=z,
        grid_hw=grid_hw,
        image_hw=image_hw,
    )


def extract_patches(fm: FeatureMap, cfg) -> PatchSet:
    """Cut the feature map into P×P tokens on the clamped grid.

    Background-only patches are dropped. Patches with at least one error cell
    in the footprint carry the inpaint flag; set membership (P_t vs R_t) is
    decided by the caller from that flag. Coordinates are filled by the
    caller via patch_coords.
    """
    P = cfg.patch
    stride = P - cfg.overlap
    C, h, w = fm.feat.shape
    d = P * P * C

    if h < P or w < P:
        if fm.fg.max() == 0:
            return _empty_patchset(d, (h, w), fm.image_hw)
        src = np.arange(C * h * w, dtype=np.int64).reshape(C, h, w)
        dst = np.arange(C * P * P, dtype=np.int64).reshape(C, P, P)[:, :h, :w]
        vals = take_flat(fm.feat, src.reshape(-1))
        tokens = scatter_flat(vals, dst.reshape(-1), (d,)).reshape((1, d))
        has_err = fm.err.max() > 0
        return PatchSet(
            tokens=tokens,
            coords=np.zeros((1, 3), dtype=np.float32),
            inpaint=np.array([has_err]),
            reproj_valid=np.ones(1, dtype=bool),
            rows=np.zeros(1, dtype=np.int32),
            cols=np.zeros(1, dtype=np.int32),
            camera_ids=np.full(1, fm.camera_id, dtype=np.int32),
            timesteps=np.full(1, fm.timestep, dtype=np.int32),
            grid_hw=(h, w),
            image_hw=fm.image_hw,
            padded=True,
        )

    rs = np.array(grid_starts(h, P, stride), dtype=np.int64)
    cs = np.array(grid_starts(w, P, stride), dtype=np.int64)
    rows, cols = (a.reshape(-1) for a in np.meshgrid(rs, cs, indexing="ij"))

    fg_any = _window_any(fm.fg, P)[rows, cols]
    err_any = _window_any(fm.err, P)[rows, cols]
    rows, cols, err_any = rows[fg_any], cols[fg_any], err_any[fg_any]
    n = len(rows)
    if n == 0:
        return _empty_patchset(d, (h, w), fm.image_hw)

    cell = np.arange(C)[None, :, None, None] * (h * w)
    rr = (rows[:, None, None, None] + np.arange(P)[None, None, :, None]) * w
    cc = cols[:, None, None, None] + np.arange(P)[None, None, None, :]
    idx = (cell + rr + cc).reshape(n, d)
    return PatchSet(
        tokens=take_flat(fm.feat, idx, out_shape=(n, d)),
        coords=np.zeros((n, 3), dtype=np.float32),
        inpaint=err_any.astype(bool),
        reproj_valid=np.ones(n, dtype=bool),
        rows=rows.astype(np.int32),
        cols=cols.astype(np.int32),
        camera_ids=np.full(n, fm.camera_id, dtype=np.int32),
        timesteps=np.full(n, fm.timestep, dtype=np.int32),
        grid_hw=(h, w),
        image_hw=fm.image_hw,
    )


def patch_spatial_coords(ps: PatchSet, src_cam: CameraParams, target_cam: CameraParams,
                         pdepth_src, cfg):
    """Fill the spatial coordinate columns, in place. Time-invariant.

    The patch-center pixel, normalized to [0,1] in the source frame; patches
    from other cameras are carried into the target view through the source
    pseudo-depth.
    """
    P, s = cfg.patch, cfg.s_f
    H, W = ps.image_hw
    u = (ps.cols + P / 2.0) * s / W
    v = (ps.rows + P / 2.0) * s / H
    if src_cam.cam_id != target_cam.cam_id:
        xy, ok = reproject_coords(np.stack([u, v], axis=1), src_cam, target_cam,
                                  pdepth_src, footprint=P * s)
        u, v = xy[:, 0], xy[:, 1]
        ps.reproj_valid[:] = ok
    ps.coords[:, 0] = u
    ps.coords[:, 1] = v
    if not np.isfinite(ps.coords[:, :2]).all():
        raise DataError(f"non-finite patch coordinates from camera {src_cam.cam_id} at t={ps.timesteps[:1]}")
    return ps


def patch_temporal_coords(ps: PatchSet, t_now, cfg):
    """Fill the temporal coordinate column, in place: (τ − t)/(k_w·n_w)."""
    span = max(cfg.window_span(), 1)
    ps.coords[:, 2] = (ps.timesteps.astype(np.float64) - t_now) / span
    return ps


def patch_coords(ps: PatchSet, src_cam: CameraParams, target_cam: CameraParams, pdepth_src, t_now, cfg):
    """Fill in spatio-temporal coordinates, in place."""
    patch_spatial_coords(ps, src_cam, target_cam, pdepth_src, cfg)
    return patch_temporal_coords(ps, t_now, cfg)


# ---------------------------------------------------------------------
# context assembly


@dataclass
class StreamEntry:
    """One encoded stream frame plus its extracted, spatially-placed patches."""

    fm: FeatureMap
    ps: PatchSet


def _stream_entries(dataset, keys, params, cfg, cache) -> dict:
    """Fetch or build the entry for every (cam_id, tau, is_novel) key.

    Cache misses are encoded together in one batched conv pass; each miss
    still lands in the cache as its own entry. The per-entry pipeline
    (encode, patch cut, spatial coordinates, token embedding) is the same
    with or without a cache; only the conv batch size differs between the
    two, so results agree to accumulation rounding.
    """
    entries = {}
    missing = []
    for cam_id, tau, is_novel in keys:
        hit = cache.get((cam_id, tau)) if cache is not None else None
        if hit is None:
            missing.append((cam_id, tau, is_novel))
        else:
            entries[(cam_id, tau)] = hit
    if not missing:
        return entries

    frames = []
    for cam_id, tau, is_novel in missing:
        if is_novel:
            fb = dataset.novel(tau)
            pd = fb.depth  # the novel bundle carries pseudo-depth in its depth layer
        else:
            fb = dataset.frame(cam_id, tau)
            pd = dataset.pdepth(cam_id, tau)
        frames.append((fb, pd, is_novel))

    ios = [_encoder_io(fb, pd, cfg, zero_error=not is_novel) for fb, pd, is_novel in frames]
    feats = _encoder_stack(Tensor(np.stack([io[0] for io in ios])), params)
    target_cam = dataset.cameras[dataset.target_cam]
    built = []
    for i, ((cam_id, tau, is_novel), (fb, pd, _)) in enumerate(zip(missing, frames)):
        fm = FeatureMap(
            feat=feats[i],
            camera_id=cam_id,
            timestep=tau,
            fg=ios[i][1],
            err=ios[i][2],
            image_hw=ios[i][3],
        )
        ps = extract_patches(fm, cfg)
        if len(ps):
            patch_spatial_coords(ps, dataset.cameras[cam_id], target_cam, None if is_novel else pd, cfg)
        built.append(((cam_id, tau), fm, ps))

    if "emb.in.w" in params:
        nonempty = [ps for _, _, ps in built if len(ps)]
        if nonempty:
            emb = embed_in(concat([ps.tokens for ps in nonempty], axis=0), params)
            ofs = 0
            for ps in nonempty:
                ps.emb = emb[ofs : ofs + len(ps)]
                ofs += len(ps)

    for key, fm, ps in built:
        entry = StreamEntry(fm, ps)
        entries[key] = entry
        if cache is not None:
            cache[key] = entry
    return entries


def build_context(t, dataset, params, cfg, cache=None):
    """Assemble the inpaint set P_t and context set R_t for frame t.

    Streams are the input cameras plus the rendered novel view, each over the
    temporal context window; assembly order is (camera, timestep, row, col),
    which keeps cached and uncached runs identical. Returns (p_set, r_set),
    either of which may be empty.
    """
    taus = sorted(select_context_frames(t, cfg.n_c, cfg.n_w, cfg.k_w)) if cfg.use_temporal else [t]

    cam_ids = sorted(dataset.input_ids()) if cfg.use_multiview else []
    keys = [(cam_id, tau, False) for cam_id in cam_ids for tau in taus]
    keys += [(dataset.target_cam, tau, True) for tau in taus]
    entries = _stream_entries(dataset, keys, params, cfg, cache)

    r_parts = []
    for cam_id in cam_ids:
        for tau in taus:
            ps = entries[(cam_id, tau)].ps
            if len(ps):
                r_parts.append(patch_temporal_coords(ps, t, cfg))

    p_set = None
    for tau in taus:
        ps = entries[(dataset.target_cam, tau)].ps
        if not len(ps):
            continue
        ps = patch_temporal_coords(ps, t, cfg)
        if tau == t:
            p_set = ps.subset(ps.inpaint)
            rest = ps.subset(~ps.inpaint)
            if len(rest):
                r_parts.append(rest)
        else:
            r_parts.append(ps)

    gh = (dataset.H // cfg.s_f, dataset.W // cfg.s_f)
    if p_set is None:
        p_set = _empty_patchset(cfg.token_dim(), gh, (dataset.H, dataset.W))
    r_set = concat_patchsets(r_parts) if r_parts else _empty_patchset(cfg.token_dim(), gh, (dataset.H, dataset.W))
    return p_set, r_set
