"""Patch decoding, overlap blending, and error-mask compositing.

Processed feature patches are decoded independently to RGB patches, pasted
back at their pixel positions under a separable hat window, normalized by the
accumulated window weight, and finally composited with the rendered frame:
holes take the network output, everything else keeps the renderer's pixels.
"""

import numpy as np

from .config import RunConfig
from .errors import DimensionError
from .tensor import Tensor, conv_transpose2d, relu, scatter_flat, sigmoid


def init_decoder_params(cfg: RunConfig, rng) -> dict:
    """Two transposed-conv stages: C -> C/2 (relu) -> 3 (sigmoid), 2x each."""
    c = cfg.channels
    plan = [(c, c // 2), (c // 2, 3)]
    params = {}
    for i, (ci, co) in enumerate(plan):
        std = np.sqrt(2.0 / (ci * 4))
        params[f"dec.d{i}.w"] = Tensor(
            rng.normal(0.0, std, (ci, co, 2, 2)).astype(np.float32), requires_grad=True
        )
        params[f"dec.d{i}.b"] = Tensor(np.zeros(co, np.float32), requires_grad=True)
    return params


def decode_patches(tokens: Tensor, params: dict, cfg: RunConfig) -> Tensor:
    """Map [n, P*P*C] tokens to [n, 3, P*s_f, P*s_f] RGB patches in [0,1]."""
    ps = cfg.patch * cfg.s_f
    n = tokens.shape[0]
    if n == 0:
        return Tensor(np.zeros((0, 3, ps, ps), np.float32))
    if tokens.shape[1] != cfg.token_dim():
        raise DimensionError(f"token dim {tokens.shape[1]} != {cfg.token_dim()}")
    x = tokens.reshape(n, cfg.channels, cfg.patch, cfg.patch)
    h = relu(conv_transpose2d(x, params["dec.d0.w"], params["dec.d0.b"], stride=2))
    return sigmoid(conv_transpose2d(h, params["dec.d1.w"], params["dec.d1.b"], stride=2))


def hat_window(size: int, overlap: int) -> np.ndarray:
    """Per-axis blending profile: linear ramps over the overlap band, flat middle.

    Adjacent patches offset by size - overlap sum to exactly 1 inside the
    band; the profile is strictly positive so covered pixels always carry
    weight.
    """
    i = np.arange(size, dtype=np.float64)
    up = (i + 1) / (overlap + 1)
    down = (size - i) / (overlap + 1)
    return np.minimum(1.0, np.minimum(up, down)).astype(np.float32)


def blend_patches(patches: Tensor, rows, cols, image_hw, cfg: RunConfig):
    """Accumulate windowed patches into an [3,H,W] canvas and normalize.

    ``rows``/``cols`` are feature-grid starts (scaled to pixels by s_f).
    Returns the normalized canvas and the coverage mask; pixels no patch
    touches stay zero. Patch footprints hanging past the image edge (padded
    tokens from sub-patch maps) are cropped.
    """
    h, w = image_hw
    ps = cfg.patch * cfg.s_f
    ov = cfg.overlap * cfg.s_f
    n = patches.shape[0]
    if n == 0:
        return Tensor(np.zeros((3, h, w), np.float32)), np.zeros((h, w), bool)
    r0 = np.asarray(rows, dtype=np.int64) * cfg.s_f
    c0 = np.asarray(cols, dtype=np.int64) * cfg.s_f

    win = hat_window(ps, ov)
    w2d = np.outer(win, win).astype(np.float32)

    if (r0 + ps > h).any() or (c0 + ps > w).any():
        # Sub-patch maps produce a single padded token; crop to the image.
        ph = min(ps, h - int(r0.min()))
        pw = min(ps, w - int(c0.min()))
        if n != 1 or ph <= 0 or pw <= 0:
            raise DimensionError("patch footprint leaves the image on a multi-patch grid")
        patches = patches[:, :, :ph, :pw]
        w2d = w2d[:ph, :pw]
    ph, pw = w2d.shape

    cell = (r0[:, None] + np.arange(ph))[:, :, None] * w + (c0[:, None] + np.arange(pw))[:, None, :]
    idx = np.arange(3).reshape(1, 3, 1, 1) * (h * w) + cell[:, None, :, :]

    acc = scatter_flat(patches * Tensor(w2d), idx, (3, h, w))
    weight = np.zeros(h * w, np.float32)
    np.add.at(weight, cell.reshape(-1), np.broadcast_to(w2d, (n, ph, pw)).reshape(-1))
    weight = weight.reshape(h, w)
    covered = weight > 0
    assert weight[covered].min() > 0 if covered.any() else True
    inv = np.where(covered, 1.0 / np.maximum(weight, 1e-12), 0.0).astype(np.float32)
    return acc * Tensor(inv[None, :, :]), covered


def final_blend(f_tilde: Tensor, frame: np.ndarray, err: np.ndarray) -> Tensor:
    """Composite: err-marked pixels take the decoded image, the rest keep the frame.

    All arrays are [3,H,W] (err is [H,W], broadcast over channels). With a
    binary mask the untouched pixels are bit-identical to ``frame``.
    """
    if f_tilde.shape != frame.shape or err.shape != frame.shape[1:]:
        raise DimensionError(
            f"composite shapes disagree: {f_tilde.shape}, {frame.shape}, {err.shape}"
        )
    e = err[None, :, :].astype(np.float32)
    return f_tilde * Tensor(e) + Tensor(frame * (1.0 - e))


def to_chw(img: np.ndarray) -> np.ndarray:
    """[H,W,3] -> contiguous [3,H,W] float32."""
    return np.ascontiguousarray(img.transpose(2, 0, 1), dtype=np.float32)


def to_hwc(img: np.ndarray) -> np.ndarray:
    """[3,H,W] -> contiguous [H,W,3] float32."""
    return np.ascontiguousarray(img.transpose(1, 2, 0), dtype=np.float32)


def write_ppm(path, img: np.ndarray) -> None:
    """Dump an [H,W,3] float image in [0,1] as binary 8-bit PPM."""
    h, w, _ = img.shape
    data = (np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())
