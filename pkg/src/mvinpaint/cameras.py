"""Pinhole camera model: projection, unprojection, and the screen-space
reprojection that carries a patch coordinate from one calibrated view into
another through a pseudo-depth lookup.

Conventions: world->camera extrinsics X_c = R @ X_w + t; camera x right,
y down, z forward; pixel (i, j) covers the unit square with center
(j + 0.5, i + 0.5); normalized screen coordinates are pixels divided by
(W, H). Geometry math runs in float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError


class BehindCameraError(DataError):
    """A point at or behind the camera plane cannot be projected."""


class InvalidDepthError(DataError):
    """Unprojection needs a strictly positive depth."""


_MIN_Z = 1e-6


@dataclass(eq=False)
class CameraParams:
    """Calibrated pinhole camera.

    Attributes:
        fx, fy: focal lengths in pixels (positive).
        cx, cy: principal point in pixels, inside the image.
        R: 3x3 world-to-camera rotation (orthonormal, det +1).
        t: 3-vector world-to-camera translation.
        W, H: image resolution in pixels.
        cam_id: integer identifier, 1-based.
    """

    fx: float
    fy: float
    cx: float
    cy: float
    R: np.ndarray
    t: np.ndarray
    W: int
    H: int
    cam_id: int

    def __post_init__(self):
        self.R = np.asarray(self.R, dtype=np.float64).reshape(3, 3)
        self.t = np.asarray(self.t, dtype=np.float64).reshape(3)
        if not (self.fx > 0 and self.fy > 0):
            raise DataError(f"camera {self.cam_id}: non-positive focal length ({self.fx}, {self.fy})")
        if not (0 <= self.cx < self.W and 0 <= self.cy < self.H):
            raise DataError(
                f"camera {self.cam_id}: principal point ({self.cx}, {self.cy}) outside {self.W}x{self.H}"
            )
        err = np.abs(self.R @ self.R.T - np.eye(3)).max()
        det = np.linalg.det(self.R)
        if err > 1e-5 or abs(det - 1.0) > 1e-5:
            raise DataError(
                f"camera {self.cam_id}: rotation not orthonormal (|RRt-I|={err:.2e}, det={det:.6f})"
            )

    def position(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.R.T @ self.t

    def view_dir(self) -> np.ndarray:
        """Unit optical axis (camera +z) in world coordinates."""
        return self.R.T @ np.array([0.0, 0.0, 1.0])


def _world_to_cam(x, y, z, cam: CameraParams):
    # Written out per component (not R @ p) so scalar and vectorized callers
    # run the exact same elementwise IEEE operations; brute-force oracles in
    # the test suite rely on bit-identical results either way.
    R, t = cam.R, cam.t
    cx = R[0, 0] * x + R[0, 1] * y + R[0, 2] * z + t[0]
    cy = R[1, 0] * x + R[1, 1] * y + R[1, 2] * z + t[1]
    cz = R[2, 0] * x + R[2, 1] * y + R[2, 2] * z + t[2]
    return cx, cy, cz


def _cam_to_world(x, y, z, cam: CameraParams):
    R, t = cam.R, cam.t
    dx, dy, dz = x - t[0], y - t[1], z - t[2]
    wx = R[0, 0] * dx + R[1, 0] * dy + R[2, 0] * dz
    wy = R[0, 1] * dx + R[1, 1] * dy + R[2, 1] * dz
    wz = R[0, 2] * dx + R[1, 2] * dy + R[2, 2] * dz
    return wx, wy, wz


def project(point, cam: CameraParams):
    """Project a world point; returns (u, v, z) in pixels and camera depth.

    Raises BehindCameraError when the point is at or behind the camera plane.
    """
    p = np.asarray(point, dtype=np.float64)
    x, y, z = _world_to_cam(p[0], p[1], p[2], cam)
    if z <= _MIN_Z:
        raise BehindCameraError(f"camera {cam.cam_id}: point has camera depth {z:.3g}")
    u = cam.fx * x / z + cam.cx
    v = cam.fy * y / z + cam.cy
    return u, v, z


def unproject(u, v, z, cam: CameraParams) -> np.ndarray:
    """Invert project: pixel (u, v) at camera depth z back to a world point."""
    if z <= 0:
        raise InvalidDepthError(f"camera {cam.cam_id}: unproject needs z > 0, got {z}")
    x = (u - cam.cx) / cam.fx * z
    y = (v - cam.cy) / cam.fy * z
    return np.array(_cam_to_world(x, y, np.float64(z), cam))


def project_points(points: np.ndarray, cam: CameraParams):
    """Vectorized project for [n,3] points.

    Returns (uv [n,2], z [n], in_front [n]); uv rows of points behind the
    camera hold garbage rather than raising, so callers must apply the mask.
    """
    p = np.asarray(points, dtype=np.float64)
    x, y, z = _world_to_cam(p[:, 0], p[:, 1], p[:, 2], cam)
    ok = z > _MIN_Z
    with np.errstate(divide="ignore", invalid="ignore"):
        u = cam.fx * x / z + cam.cx
        v = cam.fy * y / z + cam.cy
    return np.stack([u, v], axis=1), z, ok


def unproject_points(uv: np.ndarray, z: np.ndarray, cam: CameraParams) -> np.ndarray:
    """Vectorized unproject for [n,2] pixels with [n] positive depths."""
    uv = np.asarray(uv, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    x = (uv[:, 0] - cam.cx) / cam.fx * z
    y = (uv[:, 1] - cam.cy) / cam.fy * z
    return np.stack(_cam_to_world(x, y, z, cam), axis=1)


def patch_depth(pdepth: np.ndarray, u_px: float, v_px: float, footprint: int):
    """Depth for a patch-center coordinate from a pseudo-depth map.

    Prefers the center pixel's depth when it is valid; otherwise the mean
    over valid (> 0) pixels inside the footprint window. Returns 0.0 when
    the footprint holds no valid depth at all.
    """
    H, W = pdepth.shape
    cj = min(max(int(np.floor(u_px)), 0), W - 1)
    ci = min(max(int(np.floor(v_px)), 0), H - 1)
    center = float(pdepth[ci, cj])
    if center > 0:
        return center
    half = footprint // 2
    window = pdepth[max(ci - half, 0) : ci + half + 1, max(cj - half, 0) : cj + half + 1]
    valid = window[window > 0]
    if valid.size == 0:
        return 0.0
    return float(valid.mean())


def reproject_coord(x_r, src_cam: CameraParams, dst_cam: CameraParams, pdepth_src: np.ndarray, footprint: int = 28):
    """Carry a normalized screen coordinate from src view to dst view through
    the proxy geometry.

    Denormalizes ``x_r`` to pixels, looks up a patch depth in the source
    pseudo-depth map, unprojects into the world, projects into ``dst_cam``
    and renormalizes by the destination resolution. The result may lie
    outside [0, 1].

    Returns:
        (x_hat [2], valid): on a no-depth footprint or a point behind the
        destination camera, ``x_r`` is returned unchanged with valid=False.
    """
    x_r = np.asarray(x_r, dtype=np.float64)
    u_px = x_r[0] * src_cam.W
    v_px = x_r[1] * src_cam.H
    z = patch_depth(pdepth_src, u_px, v_px, footprint)
    if z <= 0:
        return x_r.copy(), False
    world = unproject(u_px, v_px, z, src_cam)
    try:
        u2, v2, _ = project(world, dst_cam)
    except BehindCameraError:
        return x_r.copy(), False
    return np.array([u2 / dst_cam.W, v2 / dst_cam.H]), True


def reproject_coords(xs, src_cam: CameraParams, dst_cam: CameraParams, pdepth_src: np.ndarray, footprint: int = 28):
    """Vectorized reproject_coord over [n,2] coordinates.

    Per-row results are bit-identical to the scalar function: the camera
    transforms are written per component, and rows whose center depth is
    invalid take the scalar footprint-mean path one at a time. Returns
    (coords [n,2], valid [n]); invalid rows keep their input coordinate.
    """
    xs = np.asarray(xs, dtype=np.float64)
    out = xs.copy()
    valid = np.zeros(len(xs), dtype=bool)
    if not len(xs):
        return out, valid
    u_px = xs[:, 0] * src_cam.W
    v_px = xs[:, 1] * src_cam.H
    H, W = pdepth_src.shape
    cj = np.clip(np.floor(u_px).astype(np.int64), 0, W - 1)
    ci = np.clip(np.floor(v_px).astype(np.int64), 0, H - 1)
    z = pdepth_src[ci, cj].astype(np.float64)
    for i in np.nonzero(z <= 0)[0]:
        z[i] = patch_depth(pdepth_src, u_px[i], v_px[i], footprint)
    ok = z > 0

    x = (u_px - src_cam.cx) / src_cam.fx * z
    y = (v_px - src_cam.cy) / src_cam.fy * z
    wx, wy, wz = _cam_to_world(x, y, z, src_cam)
    cx2, cy2, cz2 = _world_to_cam(wx, wy, wz, dst_cam)
    good = ok & (cz2 > _MIN_Z)
    with np.errstate(divide="ignore", invalid="ignore"):
        out[good, 0] = (dst_cam.fx * cx2[good] / cz2[good] + dst_cam.cx) / dst_cam.W
        out[good, 1] = (dst_cam.fy * cy2[good] / cz2[good] + dst_cam.cy) / dst_cam.H
    valid[good] = True
    return out, valid
