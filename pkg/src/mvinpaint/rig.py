"""Synthetic calibrated multi-camera world.

Builds a textured parametric object on a rigid trajectory, a camera ring
around it, and a degraded geometry proxy (vertex quantization standing in
for visual-hull coarseness). A z-buffered software rasterizer renders
ground-truth frames and proxy pseudo-depth; forward warping through the
proxy synthesizes hole-ridden novel views with binary error masks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cameras import CameraParams, project_points, unproject_points
from .errors import ConfigError, DataError


@dataclass(eq=False)
class SceneSpec:
    """Parameters of the synthetic capture rig."""

    shape: str = "sphere"  # "sphere" or "cuboid"
    radius: float = 1.0
    texture_seed: int = 7
    n_cameras: int = 5
    ring_radius: float = 3.0
    ring_height: float = 0.6
    width: int = 64
    height: int = 64
    n_frames: int = 64
    quant_step: float = 0.05  # proxy vertex quantization, in object-radius units
    rot_speed: float = 0.025  # radians per frame
    trans_amp: float = 0.15  # translation amplitude, in object-radius units
    target_cam: int = 5

    def __post_init__(self):
        if self.shape not in ("sphere", "cuboid"):
            raise ConfigError(f"unknown scene shape {self.shape!r}")
        if self.n_cameras < 4:
            raise ConfigError(f"need at least 4 cameras, got {self.n_cameras}")
        if not 1 <= self.target_cam <= self.n_cameras:
            raise ConfigError(f"target camera {self.target_cam} outside 1..{self.n_cameras}")
        if self.radius <= 0 or self.ring_radius <= self.radius:
            raise ConfigError("camera ring must lie outside the object radius")
        if self.n_frames < 1:
            raise ConfigError("trajectory needs at least one frame")

    def diameter(self) -> float:
        """Scene diameter: object diameter plus trajectory sweep."""
        return 2.0 * self.radius * (1.0 + self.trans_amp)


@dataclass(eq=False)
class GeometryProxy:
    """Triangle mesh standing in for the per-frame geometry estimate."""

    vertices: np.ndarray  # [n,3] float64, world space
    faces: np.ndarray  # [m,3] int
    timestep: int

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= len(self.vertices)):
            raise DataError("proxy face indices out of vertex range")
        if not np.isfinite(self.vertices).all():
            raise DataError("proxy vertices contain non-finite values")


@dataclass(eq=False)
class FrameBundle:
    """One rendered or synthesized frame with its masks."""

    rgb: np.ndarray  # [H,W,3] float32 in [0,1]
    fg_mask: np.ndarray  # [H,W] float32 in {0,1}
    depth: np.ndarray  # [H,W] float32, 0 = background
    error_mask: np.ndarray  # [H,W] float32 in [0,1]
    timestep: int
    camera_id: int

    def __post_init__(self):
        self.rgb = np.asarray(self.rgb, dtype=np.float32)
        self.fg_mask = np.asarray(self.fg_mask, dtype=np.float32)
        self.depth = np.asarray(self.depth, dtype=np.float32)
        self.error_mask = np.asarray(self.error_mask, dtype=np.float32)
        H, W = self.fg_mask.shape
        if self.rgb.shape != (H, W, 3) or self.depth.shape != (H, W) or self.error_mask.shape != (H, W):
            raise DataError(
                f"frame {self.camera_id}@{self.timestep}: inconsistent layer shapes "
                f"{self.rgb.shape} {self.depth.shape} {self.error_mask.shape}"
            )
        bg = self.fg_mask == 0
        if np.any(self.depth[bg] != 0):
            raise DataError(f"frame {self.camera_id}@{self.timestep}: background pixels carry depth")
        if np.any(self.error_mask[bg] != 0):
            raise DataError(f"frame {self.camera_id}@{self.timestep}: error mask leaks off the object")


# ---------------------------------------------------------------------
# meshes and trajectory


def _sphere_mesh(radius, stacks=32, slices=48):
    phi = np.linspace(0.0, np.pi, stacks + 1)
    theta = np.arange(slices) * (2.0 * np.pi / slices)
    sp, cp = np.sin(phi)[:, None], np.cos(phi)[:, None]
    st, ct = np.sin(theta)[None, :], np.cos(theta)[None, :]
    verts = np.stack(
        [radius * sp * ct, radius * np.broadcast_to(cp, (stacks + 1, slices)), radius * sp * st],
        axis=-1,
    ).reshape(-1, 3)
    faces = []
    for i in range(stacks):
        for j in range(slices):
            a = i * slices + j
            b = (i + 1) * slices + j
            c = (i + 1) * slices + (j + 1) % slices
            d = i * slices + (j + 1) % slices
            faces.append((a, b, c))
            faces.append((a, c, d))
    return verts, np.asarray(faces, dtype=np.int64)


def _cuboid_mesh(radius, grid=8):
    half = np.array([0.8, 0.6, 1.0]) * radius
    verts, faces = [], []
    # (normal axis, sign); the two remaining axes span the face
    for axis in range(3):
        for sign in (-1.0, 1.0):
            u_ax, v_ax = [a for a in range(3) if a != axis]
            base = len(verts)
            for iu in range(grid + 1):
                for iv in range(grid + 1):
                    p = np.zeros(3)
                    p[axis] = sign * half[axis]
                    p[u_ax] = (2.0 * iu / grid - 1.0) * half[u_ax]
                    p[v_ax] = (2.0 * iv / grid - 1.0) * half[v_ax]
                    verts.append(p)
            for iu in range(grid):
                for iv in range(grid):
                    a = base + iu * (grid + 1) + iv
                    b = a + (grid + 1)
                    faces.append((a, b, b + 1))
                    faces.append((a, b + 1, a + 1))
    return np.asarray(verts), np.asarray(faces, dtype=np.int64)


def _vertex_colors(verts, radius, seed):
    """Smooth procedural texture: two seeded plane waves per channel."""
    rng = np.random.default_rng(seed)
    n = len(verts)
    colors = np.empty((n, 3))
    for ch in range(3):
        c = np.full(n, 0.5)
        for _ in range(2):
            d = rng.normal(size=3)
            d /= np.linalg.norm(d)
            freq = rng.uniform(1.5, 4.0) / radius
            phase = rng.uniform(0, 2 * np.pi)
            c += 0.25 * np.sin(2.0 * np.pi * freq * (verts @ d) + phase)
        colors[:, ch] = c
    return np.clip(colors, 0.0, 1.0)


_mesh_cache = {}


def base_mesh(spec: SceneSpec):
    """Object-space mesh and per-vertex colors for the true geometry."""
    key = (spec.shape, spec.radius, spec.texture_seed)
    hit = _mesh_cache.get(key)
    if hit is None:
        if spec.shape == "sphere":
            verts, faces = _sphere_mesh(spec.radius)
        else:
            verts, faces = _cuboid_mesh(spec.radius)
        hit = (verts, faces, _vertex_colors(verts, spec.radius, spec.texture_seed))
        _mesh_cache[key] = hit
    return hit


def proxy_base_vertices(spec: SceneSpec, quant_step=None):
    """Degraded object-space vertices: quantized to a world grid."""
    step = (spec.quant_step if quant_step is None else quant_step) * spec.radius
    verts, _, _ = base_mesh(spec)
    if step <= 0:
        return verts
    key = ("proxy", spec.shape, spec.radius, spec.texture_seed, step)
    hit = _mesh_cache.get(key)
    if hit is None:
        hit = np.round(verts / step) * step
        _mesh_cache[key] = hit
    return hit


def trajectory(spec: SceneSpec, t: int):
    """Rigid pose at frame t: (rotation 3x3, translation 3)."""
    if not 0 <= t < spec.n_frames:
        raise DataError(f"timestep {t} outside trajectory 0..{spec.n_frames - 1}")
    rng = np.random.default_rng(spec.texture_seed + 101)
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    ang = spec.rot_speed * t
    K = np.array(
        [[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]]
    )
    R = np.eye(3) + np.sin(ang) * K + (1 - np.cos(ang)) * (K @ K)
    amp = spec.trans_amp * spec.radius
    trans = amp * np.array(
        [np.sin(0.11 * t), 0.4 * np.sin(0.07 * t + 1.0), np.sin(0.09 * t + 0.5)]
    )
    return R, trans


def mesh_at(spec: SceneSpec, t: int):
    """True world-space mesh at frame t: (verts, faces, colors)."""
    verts, faces, colors = base_mesh(spec)
    R, trans = trajectory(spec, t)
    return verts @ R.T + trans, faces, colors


def proxy_at(spec: SceneSpec, t: int, quant_step=None) -> GeometryProxy:
    """Degraded proxy at frame t, following the same rigid trajectory."""
    verts = proxy_base_vertices(spec, quant_step)
    _, faces, _ = base_mesh(spec)
    R, trans = trajectory(spec, t)
    return GeometryProxy(verts @ R.T + trans, faces, t)


# ---------------------------------------------------------------------
# cameras


def build_cameras(spec: SceneSpec):
    """Uniform camera ring looking at the origin; ids 1..N."""
    cams = []
    focal = 0.33 * spec.width * spec.ring_radius / spec.radius
    up = np.array([0.0, 1.0, 0.0])
    for i in range(spec.n_cameras):
        ang = 2.0 * np.pi * i / spec.n_cameras
        pos = np.array(
            [spec.ring_radius * np.cos(ang), spec.ring_height, spec.ring_radius * np.sin(ang)]
        )
        fwd = -pos / np.linalg.norm(pos)
        right = np.cross(fwd, up)
        right /= np.linalg.norm(right)
        down = np.cross(fwd, right)
        R = np.stack([right, down, fwd])  # rows: camera axes in world coords
        t = -R @ pos
        cams.append(
            CameraParams(
                fx=focal,
                fy=focal,
                cx=spec.width / 2.0,
                cy=spec.height / 2.0,
                R=R,
                t=t,
                W=spec.width,
                H=spec.height,
                cam_id=i + 1,
            )
        )
    return cams


def nearest_input_cameras(cams, target_id: int, k: int = 3):
    """The k input cameras best aligned with the target's view direction."""
    target = next(c for c in cams if c.cam_id == target_id)
    others = [c for c in cams if c.cam_id != target_id]
    scored = sorted(others, key=lambda c: (-float(target.view_dir() @ c.view_dir()), c.cam_id))
    return scored[:k]


# ---------------------------------------------------------------------
# rasterizer


def rasterize(verts, faces, attrs, cam: CameraParams, chunk=64):
    """Z-buffered triangle rasterization with perspective-correct interpolation.

    Args:
        verts: [n,3] world-space vertices.
        faces: [m,3] vertex indices.
        attrs: optional [n,A] per-vertex attributes to interpolate.
        cam: view to render.
        chunk: triangles rasterized per vectorized batch.

    Returns:
        (attr_img [H,W,A] or None, depth [H,W] float64 with 0 on background,
        mask [H,W] bool). Pixels are sampled at their centers; triangles are
        rendered double-sided; degenerate (zero-area) triangles are skipped.
    """
    H, W = cam.H, cam.W
    verts = np.asarray(verts, dtype=np.float64)
    from .cameras import _world_to_cam  # local import to keep the public surface small

    x, y, z = _world_to_cam(verts[:, 0], verts[:, 1], verts[:, 2], cam)
    with np.errstate(divide="ignore", invalid="ignore"):
        u = cam.fx * x / z + cam.cx
        v = cam.fy * y / z + cam.cy

    F = np.asarray(faces, dtype=np.int64)
    tz = z[F]
    keep = (tz > 1e-6).all(axis=1)
    F = F[keep]
    tu, tv, tz = u[F], v[F], z[F]

    # pixel-center index ranges per triangle
    j0 = np.clip(np.ceil(tu.min(1) - 0.5).astype(np.int64), 0, W - 1)
    j1 = np.clip(np.floor(tu.max(1) - 0.5).astype(np.int64), 0, W - 1)
    i0 = np.clip(np.ceil(tv.min(1) - 0.5).astype(np.int64), 0, H - 1)
    i1 = np.clip(np.floor(tv.max(1) - 0.5).astype(np.int64), 0, H - 1)
    nonempty = (np.floor(tu.max(1) - 0.5) >= 0) & (np.ceil(tu.min(1) - 0.5) <= W - 1)
    nonempty &= (np.floor(tv.max(1) - 0.5) >= 0) & (np.ceil(tv.min(1) - 0.5) <= H - 1)
    sel = np.nonzero(nonempty)[0]
    # group screen-space neighbours so each batch's union bbox stays tight
    sel = sel[np.lexsort((j0[sel], i0[sel] // 8))]

    zbuf = np.full((H, W), np.inf)
    A = attrs.shape[1] if attrs is not None else 0
    aimg = np.zeros((H, W, A)) if attrs is not None else None

    for c0 in range(0, len(sel), chunk):
        ids = sel[c0 : c0 + chunk]
        cj0, cj1 = int(j0[ids].min()), int(j1[ids].max())
        ci0, ci1 = int(i0[ids].min()), int(i1[ids].max())
        X = (np.arange(cj0, cj1 + 1) + 0.5)[None, None, :]
        Y = (np.arange(ci0, ci1 + 1) + 0.5)[None, :, None]
        x0, x1, x2 = (tu[ids, k][:, None, None] for k in range(3))
        y0, y1, y2 = (tv[ids, k][:, None, None] for k in range(3))
        z0, z1, z2 = (tz[ids, k][:, None, None] for k in range(3))
        area = (x1 - x0) * (y2 - y0) - (y1 - y0) * (x2 - x0)
        w0 = (x2 - x1) * (Y - y1) - (y2 - y1) * (X - x1)
        w1 = (x0 - x2) * (Y - y2) - (y0 - y2) * (X - x2)
        w2 = (x1 - x0) * (Y - y0) - (y1 - y0) * (X - x0)
        with np.errstate(divide="ignore", invalid="ignore"):
            l0, l1, l2 = w0 / area, w1 / area, w2 / area
            inside = (
                (np.abs(area) > 1e-12)
                & (l0 >= -1e-12)
                & (l1 >= -1e-12)
                & (l2 >= -1e-12)
            )
            invz = l0 / z0 + l1 / z1 + l2 / z2
            zc = np.where(inside & (invz > 0), 1.0 / invz, np.inf)
        kb = zc.argmin(axis=0)
        zbest = np.take_along_axis(zc, kb[None], 0)[0]
        region = (slice(ci0, ci1 + 1), slice(cj0, cj1 + 1))
        upd = zbest < zbuf[region]
        if not upd.any():
            continue
        zbuf[region][upd] = zbest[upd]
        if attrs is not None:
            av = attrs[F[ids]]  # [K,3,A]
            with np.errstate(invalid="ignore"):
                anum = (
                    (l0 / z0)[..., None] * av[:, 0][:, None, None, :]
                    + (l1 / z1)[..., None] * av[:, 1][:, None, None, :]
                    + (l2 / z2)[..., None] * av[:, 2][:, None, None, :]
                )
            abest = np.take_along_axis(anum, kb[None, ..., None], 0)[0]
            aimg[region][upd] = abest[upd] * zbest[upd, None]

    mask = np.isfinite(zbuf)
    depth = np.where(mask, zbuf, 0.0)
    return aimg, depth, mask


def render(spec: SceneSpec, cam: CameraParams, t: int) -> FrameBundle:
    """Ground-truth frame of the true object; error mask all zero."""
    verts, faces, colors = mesh_at(spec, t)
    rgb, depth, mask = rasterize(verts, faces, colors, cam)
    rgb = np.clip(rgb, 0.0, 1.0)
    rgb[~mask] = 0.0
    return FrameBundle(
        rgb=rgb.astype(np.float32),
        fg_mask=mask.astype(np.float32),
        depth=depth.astype(np.float32),
        error_mask=np.zeros((cam.H, cam.W), dtype=np.float32),
        timestep=t,
        camera_id=cam.cam_id,
    )


def render_pseudo_depth(proxy: GeometryProxy, cam: CameraParams) -> np.ndarray:
    """Pseudo-depth: z-buffer of the proxy; float32, 0 where no hit."""
    if len(proxy.faces) == 0:
        return np.zeros((cam.H, cam.W), dtype=np.float32)
    _, depth, _ = rasterize(proxy.vertices, proxy.faces, None, cam)
    return depth.astype(np.float32)


# ---------------------------------------------------------------------
# novel-view synthesis


def synthesize_novel_view(inputs, input_cams, proxy: GeometryProxy, target_cam: CameraParams, diameter: float):
    """Forward-warp input views through the proxy into the target camera.

    For each target pixel on the proxy silhouette: unproject through the
    pseudo-depth, project into each input view (best view-direction
    alignment first, camera id breaking ties) and take the first color whose
    camera depth matches the input's depth map within 2% of the scene
    diameter at the nearest pixel. Pixels with no consistent source are
    holes: rgb 0, error 1.

    Returns (rgb, error_mask, fg_mask, pdepth) float32 arrays.
    """
    pdepth = render_pseudo_depth(proxy, target_cam)
    H, W = pdepth.shape
    rgb = np.zeros((H, W, 3), dtype=np.float32)
    err = np.zeros((H, W), dtype=np.float32)
    mask = (pdepth > 0).astype(np.float32)

    ii, jj = np.nonzero(pdepth > 0)
    if len(ii) == 0:
        return rgb, err, mask, pdepth

    uv = np.stack([jj + 0.5, ii + 0.5], axis=1)
    world = unproject_points(uv, pdepth[ii, jj].astype(np.float64), target_cam)

    tdir = target_cam.view_dir()
    order = sorted(
        range(len(input_cams)),
        key=lambda k: (-float(tdir @ input_cams[k].view_dir()), input_cams[k].cam_id),
    )

    thr = 0.02 * diameter
    chosen = np.zeros(len(ii), dtype=bool)
    color = np.zeros((len(ii), 3), dtype=np.float32)
    for k in order:
        cam_k, frame_k = input_cams[k], inputs[k]
        uvk, zk, front = project_points(world, cam_k)
        with np.errstate(invalid="ignore"):
            jk = np.floor(uvk[:, 0]).astype(np.int64)
            ik = np.floor(uvk[:, 1]).astype(np.int64)
        inb = front & (jk >= 0) & (jk < cam_k.W) & (ik >= 0) & (ik < cam_k.H)
        cand = inb & ~chosen
        if not cand.any():
            continue
        src_z = frame_k.depth[ik[cand], jk[cand]].astype(np.float64)
        consistent = (src_z > 0) & (np.abs(zk[cand] - src_z) <= thr)
        take = np.nonzero(cand)[0][consistent]
        color[take] = frame_k.rgb[ik[take], jk[take]]
        chosen[take] = True

    rgb[ii, jj] = color
    err[ii[~chosen], jj[~chosen]] = 1.0
    return rgb, err, mask, pdepth


# ---------------------------------------------------------------------
# temporal context


def select_context_frames(t: int, n_c: int = 3, n_w: int = 3, k_w: int = 10):
    """Timesteps attended to at frame t: the frame itself, its n_c immediate
    predecessors, and n_w strided history frames k_w apart. Deduplicated,
    negatives dropped, descending."""
    if n_c < 0 or n_w < 0:
        raise ConfigError(f"context counts must be non-negative, got n_c={n_c} n_w={n_w}")
    if k_w <= 1:
        raise ConfigError(f"window spacing k_w must exceed 1, got {k_w}")
    ts = {t}
    ts.update(t - j for j in range(1, n_c + 1))
    ts.update(t - k_w * j for j in range(1, n_w + 1))
    return sorted((s for s in ts if s >= 0), reverse=True)
