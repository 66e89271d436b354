"""Image quality metrics on real-valued (magnitude) images."""

from __future__ import annotations

import math

import numpy as np
from scipy.ndimage import gaussian_filter

__all__ = ["psnr", "ssim"]


def _as_real_pair(gt, x):
    gt, x = np.asarray(gt), np.asarray(x)
    if np.iscomplexobj(gt) or np.iscomplexobj(x):
        raise ValueError("metrics are defined on real-valued images")
    if gt.shape != x.shape:
        raise ValueError(f"shape mismatch: {gt.shape} vs {x.shape}")
    return gt.astype(np.float64), x.astype(np.float64)


def psnr(gt, x, data_range: float | None = None) -> float:
    """Peak signal-to-noise ratio in dB; +inf when the images are equal.

    data_range defaults to max(gt), the convention used throughout for
    magnitude images with a black background.
    """
    gt, x = _as_real_pair(gt, x)
    if data_range is None:
        data_range = float(gt.max())
    if data_range <= 0:
        raise ValueError(f"data_range must be positive, got {data_range}")
    mse = float(np.mean((gt - x) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(data_range**2 / mse)


def ssim(gt, x, data_range: float | None = None) -> float:
    """Mean structural similarity with an 11x11 Gaussian window.

    Gaussian weighting, sigma = 1.5, K1 = 0.01, K2 = 0.03, population
    (not sample) covariance. The score is averaged over the map with a
    5-pixel border crop so partially-covered windows do not contribute.
    """
    gt, x = _as_real_pair(gt, x)
    if gt.ndim != 2:
        raise ValueError("ssim expects 2-D images")
    if data_range is None:
        data_range = float(gt.max())
    if data_range <= 0:
        raise ValueError(f"data_range must be positive, got {data_range}")

    # truncate=3.5 puts the kernel radius at int(3.5*1.5 + 0.5) = 5,
    # i.e. an 11x11 window
    def win(a):
        return gaussian_filter(a, sigma=1.5, truncate=3.5)

    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    mu_g = win(gt)
    mu_x = win(x)
    var_g = win(gt * gt) - mu_g * mu_g
    var_x = win(x * x) - mu_x * mu_x
    cov = win(gt * x) - mu_g * mu_x
    s = ((2 * mu_g * mu_x + c1) * (2 * cov + c2)) / (
        (mu_g**2 + mu_x**2 + c1) * (var_g + var_x + c2)
    )
    pad = 5
    if s.shape[0] <= 2 * pad or s.shape[1] <= 2 * pad:
        raise ValueError("image too small for an 11x11 SSIM window")
    return float(s[pad:-pad, pad:-pad].mean())
