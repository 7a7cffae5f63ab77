"""Image quality metrics.  The dynamic range is taken from the target image."""
from __future__ import annotations

import numpy as np
from scipy.signal import convolve2d


def psnr(pred, target) -> float:
    """``20 log10(range(target) / RMSE)`` in dB; ``inf`` for identical images."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    mse = np.mean((pred - target) ** 2)
    if mse == 0:
        return float("inf")
    data_range = target.max() - target.min()
    return float(20.0 * np.log10(data_range / np.sqrt(mse)))


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x**2) / (2 * sigma**2))
    g /= g.sum()
    return np.outer(g, g)


def ssim(pred, target, window: int = 11, sigma: float = 1.5, k1: float = 0.01, k2: float = 0.03) -> float:
    """Single-scale SSIM with Gaussian-weighted local statistics, averaged over valid pixels."""
    x = np.asarray(pred, dtype=np.float64)
    y = np.asarray(target, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 2:
        raise ValueError("ssim expects two 2-D images of equal shape")
    w = gaussian_window(window, sigma)

    def filt(a):
        return convolve2d(a, w, mode="valid")

    data_range = y.max() - y.min()
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    mx, my = filt(x), filt(y)
    sxx = filt(x * x) - mx * mx
    syy = filt(y * y) - my * my
    sxy = filt(x * y) - mx * my
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    if np.all(den == 0):
        return 1.0
    return float(np.mean(num / den))


def batch_metrics(pred, target):
    """Mean PSNR and SSIM over a batch of ``(B, n, n)`` images."""
    p = [psnr(a, b) for a, b in zip(pred, target)]
    s = [ssim(a, b) for a, b in zip(pred, target)]
    return float(np.mean(p)), float(np.mean(s))
