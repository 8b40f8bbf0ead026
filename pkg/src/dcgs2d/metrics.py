"""Image quality metrics and the per-pixel directional-consistency map."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import convolve2d

from .core import Raster

PSNR_CAP = 99.0
SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_WIN = 11
SSIM_SIGMA = 1.5

#: value stored in masked cells of a DC map
DC_MASKED = -1.0


def _arrays(a, b):
    x = a.data if isinstance(a, Raster) else np.asarray(a, float)
    y = b.data if isinstance(b, Raster) else np.asarray(b, float)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    return x, y


def psnr(a, b) -> float:
    """PSNR in dB after clamping both images to [0, 1]; identical images give ``PSNR_CAP``."""
    x, y = _arrays(a, b)
    mse = float(np.mean(np.square(np.clip(x, 0, 1) - np.clip(y, 0, 1))))
    if mse == 0.0:
        return PSNR_CAP
    return float(min(PSNR_CAP, 10.0 * np.log10(1.0 / mse)))


def _gaussian_window(size: int = SSIM_WIN, sigma: float = SSIM_SIGMA) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2.0
    k = np.exp(-(ax ** 2) / (2 * sigma ** 2))
    w = np.outer(k, k)
    return w / w.sum()


def _ssim_channel(x: np.ndarray, y: np.ndarray, win: np.ndarray) -> float:
    c1 = (SSIM_K1 * 1.0) ** 2
    c2 = (SSIM_K2 * 1.0) ** 2
    if x.shape[0] < win.shape[0] or x.shape[1] < win.shape[1]:
        # one global window over the whole image
        mx, my = x.mean(), y.mean()
        vx, vy = x.var(), y.var()
        cov = ((x - mx) * (y - my)).mean()
        return float(((2 * mx * my + c1) * (2 * cov + c2)) /
                     ((mx * mx + my * my + c1) * (vx + vy + c2)))

    def filt(img):
        return convolve2d(img, win, mode="valid")

    mx, my = filt(x), filt(y)
    sxx = filt(x * x) - mx * mx
    syy = filt(y * y) - my * my
    sxy = filt(x * y) - mx * my
    smap = ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2))
    return float(smap.mean())


def ssim(a, b) -> float:
    """Mean SSIM (11x11 Gaussian window, sigma 1.5, K1=0.01, K2=0.03, range 1).

    Only full windows are scored; channels are averaged. Inputs are clamped
    to [0, 1].
    """
    x, y = _arrays(a, b)
    x = np.clip(x, 0, 1)
    y = np.clip(y, 0, 1)
    if x.ndim == 2:
        x, y = x[:, :, None], y[:, :, None]
    win = _gaussian_window()
    return float(np.mean([_ssim_channel(x[:, :, c], y[:, :, c], win) for c in range(x.shape[2])]))


@dataclass(frozen=True)
class DcMap:
    kappa: np.ndarray   # (H, W); DC_MASKED where mask is set
    mask: np.ndarray    # (H, W) bool, True = too few usable gradients


def luminance(image) -> np.ndarray:
    data = image.data if isinstance(image, Raster) else np.asarray(image, float)
    if data.ndim == 2:
        return data
    if data.shape[2] == 1:
        return data[:, :, 0]
    return data[:, :, :3] @ np.array([0.299, 0.587, 0.114])


def _box_sum(a: np.ndarray, r: int) -> np.ndarray:
    """Sum over the (2r+1)^2 window around every pixel, truncated at the borders."""
    h, w = a.shape
    ii = np.zeros((h + 1, w + 1))
    ii[1:, 1:] = a.cumsum(0).cumsum(1)
    y0 = np.clip(np.arange(h) - r, 0, h)
    y1 = np.clip(np.arange(h) + r + 1, 0, h)
    x0 = np.clip(np.arange(w) - r, 0, w)
    x1 = np.clip(np.arange(w) + r + 1, 0, w)
    return (ii[y1][:, x1] - ii[y0][:, x1] - ii[y1][:, x0] + ii[y0][:, x0])


def dc_map(image, window_radius: int = 7, mag_floor: float = 1e-3, min_count: int = 4) -> DcMap:
    """Length of the circular mean of image-gradient directions around each pixel."""
    lum = luminance(image)
    gy, gx = np.gradient(lum)
    mag = np.hypot(gx, gy)
    ok = mag >= mag_floor
    safe = np.where(ok, mag, 1.0)
    ux = np.where(ok, gx / safe, 0.0)
    uy = np.where(ok, gy / safe, 0.0)
    sx = _box_sum(ux, window_radius)
    sy = _box_sum(uy, window_radius)
    # counts are integers; rounding removes integral-image float drift
    cnt = np.rint(_box_sum(ok.astype(float), window_radius))
    mask = cnt < min_count
    with np.errstate(invalid="ignore", divide="ignore"):
        kappa = np.clip(np.hypot(sx, sy) / cnt, 0.0, 1.0)
    kappa = np.where(mask, DC_MASKED, kappa)
    return DcMap(kappa, mask)
