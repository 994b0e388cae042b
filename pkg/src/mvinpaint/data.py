"""Dataset directory layout: generation and loading.

A dataset is a flat directory of MVT1 tensor files plus ``manifest.txt``
(key=value lines). Every camera i in 1..N gets ``cam{i}_t{t}_rgb.mvt``,
``_mask.mvt``, ``_depth.mvt`` and ``_pdepth.mvt`` (proxy pseudo-depth) per
frame; the held-out target view additionally gets the synthesized
``novel_t{t}_rgb.mvt``, ``_mask.mvt``, ``_err.mvt`` and ``_pdepth.mvt``.
The target camera's own ``cam{target}_*`` files are the ground truth.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .cameras import CameraParams
from .errors import DataError
from .mvt import read_mvt, write_mvt
from .rig import (
    FrameBundle,
    SceneSpec,
    build_cameras,
    nearest_input_cameras,
    proxy_at,
    render,
    render_pseudo_depth,
    synthesize_novel_view,
)

_SCENE_KEYS = (
    "shape",
    "radius",
    "texture_seed",
    "ring_radius",
    "ring_height",
    "quant_step",
    "rot_speed",
    "trans_amp",
)


def dataset_write(spec: SceneSpec, out_dir, extra_meta: dict | None = None) -> None:
    """Render and store the full dataset for a scene."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cams = build_cameras(spec)
    target = cams[spec.target_cam - 1]
    synth_cams = nearest_input_cameras(cams, spec.target_cam, 3)

    lines = {
        "N": spec.n_cameras,
        "W": spec.width,
        "H": spec.height,
        "T": spec.n_frames,
        "target_cam": spec.target_cam,
    }
    for k in _SCENE_KEYS:
        lines[k] = getattr(spec, k)
    for cam in cams:
        i = cam.cam_id
        lines[f"cam{i}_fx"] = repr(float(cam.fx))
        lines[f"cam{i}_fy"] = repr(float(cam.fy))
        lines[f"cam{i}_cx"] = repr(float(cam.cx))
        lines[f"cam{i}_cy"] = repr(float(cam.cy))
        lines[f"cam{i}_R"] = " ".join(repr(float(v)) for v in cam.R.reshape(-1))
        lines[f"cam{i}_t"] = " ".join(repr(float(v)) for v in cam.t)
    if extra_meta:
        lines.update(extra_meta)
    (out / "manifest.txt").write_text("".join(f"{k}={v}\n" for k, v in lines.items()))

    for t in range(spec.n_frames):
        proxy = proxy_at(spec, t)
        frames = {}
        for cam in cams:
            fb = render(spec, cam, t)
            frames[cam.cam_id] = fb
            stem = f"cam{cam.cam_id}_t{t}"
            write_mvt(out / f"{stem}_rgb.mvt", fb.rgb)
            write_mvt(out / f"{stem}_mask.mvt", fb.fg_mask)
            write_mvt(out / f"{stem}_depth.mvt", fb.depth)
            write_mvt(out / f"{stem}_pdepth.mvt", render_pseudo_depth(proxy, cam))
        rgb, err, mask, pdepth = synthesize_novel_view(
            [frames[c.cam_id] for c in synth_cams], synth_cams, proxy, target, spec.diameter()
        )
        write_mvt(out / f"novel_t{t}_rgb.mvt", rgb)
        write_mvt(out / f"novel_t{t}_mask.mvt", mask)
        write_mvt(out / f"novel_t{t}_err.mvt", err)
        write_mvt(out / f"novel_t{t}_pdepth.mvt", pdepth)


def _parse_manifest(path: Path) -> dict:
    if not path.exists():
        raise DataError(f"{path.parent}: no manifest.txt, not a dataset directory")
    values = {}
    for ln, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        if "=" not in line:
            raise DataError(f"{path}:{ln}: expected key=value, got {line!r}")
        k, _, v = line.partition("=")
        values[k.strip()] = v.strip()
    return values


class Dataset:
    """Read-only view of a generated dataset directory."""

    def __init__(self, root):
        self.root = Path(root)
        m = _parse_manifest(self.root / "manifest.txt")
        try:
            self.N = int(m["N"])
            self.W = int(m["W"])
            self.H = int(m["H"])
            self.T = int(m["T"])
            self.target_cam = int(m["target_cam"])
            self.cameras = {}
            for i in range(1, self.N + 1):
                self.cameras[i] = CameraParams(
                    fx=float(m[f"cam{i}_fx"]),
                    fy=float(m[f"cam{i}_fy"]),
                    cx=float(m[f"cam{i}_cx"]),
                    cy=float(m[f"cam{i}_cy"]),
                    R=np.array([float(x) for x in m[f"cam{i}_R"].split()]).reshape(3, 3),
                    t=np.array([float(x) for x in m[f"cam{i}_t"].split()]),
                    W=int(m["W"]),
                    H=int(m["H"]),
                    cam_id=i,
                )
        except KeyError as exc:
            raise DataError(f"{self.root}/manifest.txt: missing key {exc}") from exc
        except ValueError as exc:
            raise DataError(f"{self.root}/manifest.txt: malformed value ({exc})") from exc
        self.manifest = m

    def input_ids(self):
        return [i for i in range(1, self.N + 1) if i != self.target_cam]

    def _read(self, name: str) -> np.ndarray:
        path = self.root / name
        try:
            return read_mvt(path)
        except OSError as exc:
            raise DataError(f"missing dataset file {path}") from exc

    def frame(self, cam_id: int, t: int) -> FrameBundle:
        """True rendered frame of any camera (the target's is the ground truth)."""
        stem = f"cam{cam_id}_t{t}"
        rgb = self._read(f"{stem}_rgb.mvt")
        mask = self._read(f"{stem}_mask.mvt")
        depth = self._read(f"{stem}_depth.mvt")
        err = np.zeros_like(mask)
        return FrameBundle(rgb, mask, depth, err, t, cam_id)

    def pdepth(self, cam_id: int, t: int) -> np.ndarray:
        return self._read(f"cam{cam_id}_t{t}_pdepth.mvt")

    def novel(self, t: int) -> FrameBundle:
        """Synthesized target view; depth holds the proxy pseudo-depth."""
        rgb = self._read(f"novel_t{t}_rgb.mvt")
        mask = self._read(f"novel_t{t}_mask.mvt")
        err = self._read(f"novel_t{t}_err.mvt")
        pdepth = self._read(f"novel_t{t}_pdepth.mvt")
        return FrameBundle(rgb, mask, pdepth, err, t, self.target_cam)

    def gt(self, t: int) -> FrameBundle:
        return self.frame(self.target_cam, t)
