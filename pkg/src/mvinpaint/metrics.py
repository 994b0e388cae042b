"""Image quality metrics: PSNR and single-scale SSIM, whole or masked."""

import math

import numpy as np

from .errors import DimensionError

_LUMA = np.array([0.299, 0.587, 0.114], dtype=np.float64)


def luma(img: np.ndarray) -> np.ndarray:
    """[3,H,W] RGB in [0,1] -> [H,W] luma (BT.601 weights)."""
    if img.ndim != 3 or img.shape[0] != 3:
        raise DimensionError(f"expected [3,H,W] image, got {img.shape}")
    return np.tensordot(_LUMA, img.astype(np.float64), axes=1)


def psnr(a: np.ndarray, b: np.ndarray, mask: np.ndarray | None = None) -> float:
    """10*log10(1/MSE) against a peak of 1. Identical inputs give math.inf.

    With ``mask`` the MSE averages only the marked pixels (all channels of
    each). An empty mask also returns the infinity sentinel: there is nothing
    to disagree on.
    """
    if a.shape != b.shape:
        raise DimensionError(f"psnr shapes disagree: {a.shape} vs {b.shape}")
    d = a.astype(np.float64) - b.astype(np.float64)
    if mask is not None:
        keep = mask > 0
        if not keep.any():
            return math.inf
        d = d[:, keep] if d.ndim == 3 else d[keep]
    mse = float(np.mean(d * d))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def _gauss_kernel(size=11, sigma=1.5):
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2
    k = np.exp(-(x * x) / (2 * sigma * sigma))
    return k / k.sum()


def _filt(img, k):
    # separable valid-mode filtering, rows then columns
    out = np.apply_along_axis(lambda r: np.convolve(r, k, mode="valid"), 1, img)
    return np.apply_along_axis(lambda c: np.convolve(c, k, mode="valid"), 0, out)


def ssim(a: np.ndarray, b: np.ndarray, mask: np.ndarray | None = None,
         k1=0.01, k2=0.03, win=11, sigma=1.5) -> float:
    """Mean local SSIM over luma with a Gaussian window.

    The masked variant zeroes both images outside the mask and then runs the
    plain computation, so hole scores also reflect the hole boundary.
    """
    ya, yb = luma(a), luma(b)
    if mask is not None:
        keep = (mask > 0).astype(np.float64)
        ya, yb = ya * keep, yb * keep
    h, w = ya.shape
    if h < win or w < win:
        raise DimensionError(f"image {ya.shape} smaller than the {win}x{win} SSIM window")
    k = _gauss_kernel(win, sigma)
    mu_a, mu_b = _filt(ya, k), _filt(yb, k)
    va = _filt(ya * ya, k) - mu_a * mu_a
    vb = _filt(yb * yb, k) - mu_b * mu_b
    cov = _filt(ya * yb, k) - mu_a * mu_b
    c1, c2 = k1 * k1, k2 * k2
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (va + vb + c2)
    return float(np.mean(num / den))
